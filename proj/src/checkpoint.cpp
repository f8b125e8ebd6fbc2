#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <nlohmann/json.hpp>

#include "silcarve/silnet.hpp"

namespace silcarve {

using nlohmann::json;

namespace {

constexpr char kMagic[] = "SILCARVE-CKPT 1\n";

void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 4);
}

std::uint32_t get_u32(const unsigned char* b) {
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

void write_floats(std::ostream& out, const std::vector<float>& values) {
  for (float v : values) put_u32(out, std::bit_cast<std::uint32_t>(v));
}

json config_json(const ModelConfig& c) {
  return {{"h", c.h},
          {"d", c.d},
          {"features", c.features},
          {"enc_channels", c.enc_channels},
          {"angle_dim", c.angle_dim},
          {"dec_channels", c.dec_channels},
          {"dec3d_channels", c.dec3d_channels},
          {"pooling", to_string(c.pooling)}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.h = j.at("h");
  c.d = j.at("d");
  c.features = j.at("features");
  c.enc_channels = j.at("enc_channels");
  c.angle_dim = j.at("angle_dim");
  c.dec_channels = j.at("dec_channels");
  c.dec3d_channels = j.at("dec3d_channels");
  c.pooling = parse_pooling(j.at("pooling"));
  return c;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelParams<float>& params,
                     const std::map<std::string, std::string>& info) {
  json tensors = json::array();
  for (const auto& [name, t] : params.tensors) tensors.push_back({{"name", name}, {"shape", t.shape}});
  tensors.push_back({{"name", "mean_image"}, {"shape", params.mean_image.shape}});
  const json header = {{"config", config_json(params.config)}, {"info", info}, {"tensors", tensors}};
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof kMagic - 1);
  const auto len = static_cast<std::uint64_t>(text.size());
  put_u32(out, static_cast<std::uint32_t>(len & 0xffffffffu));
  put_u32(out, static_cast<std::uint32_t>(len >> 32));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : params.tensors) write_floats(out, t.data);
  write_floats(out, params.mean_image.data);
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read checkpoint " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), {});
  const std::size_t magic_len = sizeof kMagic - 1;
  auto fail = [&](const std::string& why) { return Error("checkpoint " + path.string() + ": " + why); };
  if (bytes.size() < magic_len + 8 || std::memcmp(bytes.data(), kMagic, magic_len) != 0)
    throw fail("bad magic");
  const std::uint64_t len = get_u32(&bytes[magic_len]) | static_cast<std::uint64_t>(get_u32(&bytes[magic_len + 4])) << 32;
  std::size_t pos = magic_len + 8;
  if (len > bytes.size() - pos) throw fail("truncated header");
  json header;
  try {
    header = json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                         bytes.begin() + static_cast<std::ptrdiff_t>(pos + len));
  } catch (const json::exception& e) {
    throw fail(std::string("malformed header: ") + e.what());
  }
  pos += len;

  Checkpoint ck;
  try {
    ck.params.config = config_from_json(header.at("config"));
    ck.info = header.at("info").get<std::map<std::string, std::string>>();
    for (const auto& entry : header.at("tensors")) {
      const std::string name = entry.at("name");
      const Shape shape = entry.at("shape").get<Shape>();
      Tensor<float> t(shape);
      if ((bytes.size() - pos) / 4 < t.size()) throw fail("truncated payload for " + name);
      for (auto& v : t.data) {
        v = std::bit_cast<float>(get_u32(&bytes[pos]));
        pos += 4;
      }
      if (name == "mean_image") ck.params.mean_image = std::move(t);
      else ck.params.tensors.emplace(name, std::move(t));
    }
  } catch (const json::exception& e) {
    throw fail(std::string("malformed header: ") + e.what());
  }
  if (pos != bytes.size()) throw fail("trailing bytes after payload");

  const auto layout = parameter_layout(ck.params.config);
  if (layout.size() != ck.params.tensors.size()) throw fail("tensor set does not match the model layout");
  for (const auto& [name, shape] : layout) {
    auto it = ck.params.tensors.find(name);
    if (it == ck.params.tensors.end() || it->second.shape != shape) throw fail("tensor " + name + " missing or misshapen");
  }
  if (ck.params.mean_image.shape != Shape{ck.params.config.h, ck.params.config.h}) throw fail("bad mean image");
  return ck;
}

}  // namespace silcarve
