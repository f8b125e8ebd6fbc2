#include "silcarve/pgm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <string>

#include "silcarve/tensor.hpp"

namespace silcarve {

void write_pgm(const std::filesystem::path& path, const Gray8& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << "P5\n" << img.cols() << ' ' << img.rows() << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.data()), static_cast<std::streamsize>(img.size()));
  if (!out) throw Error("failed writing " + path.string());
}

namespace {

// Next header token, skipping whitespace and '#' comments.
std::string header_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

}  // namespace

Gray8 read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  if (header_token(in) != "P5") throw Error(path.string() + ": not a binary PGM");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(header_token(in));
    h = std::stoi(header_token(in));
    maxval = std::stoi(header_token(in));
  } catch (const std::exception&) {
    throw Error(path.string() + ": malformed PGM header");
  }
  if (w <= 0 || h <= 0 || maxval != 255) throw Error(path.string() + ": unsupported PGM header");
  Gray8 img(h, w);
  in.read(reinterpret_cast<char*>(img.data()), static_cast<std::streamsize>(img.size()));
  if (in.gcount() != img.size()) throw Error(path.string() + ": truncated PGM payload");
  return img;
}

Gray8 to_gray8(const GrayImage& img) {
  return img.unaryExpr([](float v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
  });
}

GrayImage from_gray8(const Gray8& img) { return img.cast<float>() / 255.0f; }

Gray8 silhouette_to_gray8(const Silhouette& s) {
  return s.unaryExpr([](std::uint8_t v) { return static_cast<std::uint8_t>(v == kObject ? 0 : 255); });
}

Silhouette silhouette_from_gray8(const Gray8& img) {
  return img.unaryExpr([](std::uint8_t v) { return v < 128 ? kObject : kBackground; });
}

}  // namespace silcarve
