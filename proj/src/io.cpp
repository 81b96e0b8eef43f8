#include "dpdd/io.hpp"

#include <unistd.h>
#include <zlib.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace dpdd {
namespace {

std::filesystem::path temp_sibling(const std::filesystem::path& path) {
  // Processes may race on the same directory; a random suffix keeps their
  // temp files apart. The rename itself is what provides atomicity.
  static std::atomic<std::uint64_t> counter{0};
  const auto tag = std::to_string(::getpid()) + "." + std::to_string(counter.fetch_add(1));
  std::filesystem::path p = path;
  p += ".tmp." + tag;
  return p;
}

void append_be32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>((v >> 24) & 0xFF));
  out.push_back(static_cast<char>((v >> 16) & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
  out.push_back(static_cast<char>(v & 0xFF));
}

void append_png_chunk(std::string& out, const char type[4], const std::string& payload) {
  append_be32(out, static_cast<std::uint32_t>(payload.size()));
  std::string body(type, 4);
  body += payload;
  out += body;
  const auto crc = crc32(0, reinterpret_cast<const Bytef*>(body.data()),
                         static_cast<uInt>(body.size()));
  append_be32(out, static_cast<std::uint32_t>(crc));
}

std::string zlib_deflate(const std::string& raw) {
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::string out(bound, '\0');
  if (compress2(reinterpret_cast<Bytef*>(out.data()), &bound,
                reinterpret_cast<const Bytef*>(raw.data()), static_cast<uLong>(raw.size()),
                6) != Z_OK)
    throw IoError("png compression failed");
  out.resize(bound);
  return out;
}

}  // namespace

void atomic_write_file(const std::filesystem::path& path, const std::string& bytes) {
  const auto parent = path.parent_path();
  if (!parent.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(parent, ec);
  }
  const auto tmp = temp_sibling(path);
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + tmp.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    f.flush();
    if (!f) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw IoError("write failed: " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("rename failed for " + path.string() + ": " + ec.message());
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path.string());
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (f.bad()) throw IoError("read failed: " + path.string());
  return buf;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  atomic_write_file(path, text);
}

void write_png_grid(const std::filesystem::path& path,
                    const std::vector<Matrix>& class_images, const ImageShape& shape,
                    Index max_per_row) {
  require(shape.channels == 1 || shape.channels == 3,
          "png preview supports 1 or 3 channels");
  require(max_per_row > 0, "grid width must be positive");
  Index cols = 0;
  for (const auto& m : class_images) cols = std::max(cols, std::min(m.rows(), max_per_row));
  require(cols > 0, "no images to render");
  const Index rows = static_cast<Index>(class_images.size());
  const Index pad = 1;
  const Index cell_h = shape.height + pad;
  const Index cell_w = shape.width + pad;
  const Index img_h = rows * cell_h + pad;
  const Index img_w = cols * cell_w + pad;
  const int ch = shape.channels == 3 ? 3 : 1;

  std::vector<std::uint8_t> canvas(static_cast<std::size_t>(img_h * img_w * ch), 32);
  auto put = [&](Index y, Index x, int c, std::uint8_t v) {
    canvas[static_cast<std::size_t>((y * img_w + x) * ch + c)] = v;
  };
  for (Index r = 0; r < rows; ++r) {
    const Matrix& m = class_images[static_cast<std::size_t>(r)];
    for (Index i = 0; i < std::min(m.rows(), cols); ++i) {
      for (Index y = 0; y < shape.height; ++y) {
        for (Index x = 0; x < shape.width; ++x) {
          for (int c = 0; c < ch; ++c) {
            const double v = m(i, (c * shape.height + y) * shape.width + x);
            const double q = std::clamp(v, 0.0, 1.0) * 255.0;
            put(pad + r * cell_h + y, pad + i * cell_w + x, c,
                static_cast<std::uint8_t>(std::lround(q)));
          }
        }
      }
    }
  }

  // Raw scanlines with filter byte 0.
  std::string raw;
  raw.reserve(static_cast<std::size_t>(img_h * (img_w * ch + 1)));
  for (Index y = 0; y < img_h; ++y) {
    raw.push_back('\0');
    raw.append(reinterpret_cast<const char*>(canvas.data() + y * img_w * ch),
               static_cast<std::size_t>(img_w * ch));
  }

  std::string png("\x89PNG\r\n\x1a\n", 8);
  std::string ihdr;
  append_be32(ihdr, static_cast<std::uint32_t>(img_w));
  append_be32(ihdr, static_cast<std::uint32_t>(img_h));
  ihdr.push_back(8);                      // bit depth
  ihdr.push_back(ch == 3 ? 2 : 0);        // color type
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  append_png_chunk(png, "IHDR", ihdr);
  append_png_chunk(png, "IDAT", zlib_deflate(raw));
  append_png_chunk(png, "IEND", "");
  atomic_write_file(path, png);
}

}  // namespace dpdd
