#include "recon/io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include "json.hpp"

namespace recon {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

void write_png(const std::string& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3)
    throw IoError("write_png: channels must be 1 or 3");
  if (img.width == 0 || img.height == 0) throw IoError("write_png: empty image");

  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("write_png: cannot open " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("write_png: libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("write_png: libpng error writing " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8,
               img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<png_byte> row(img.width * img.channels);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < img.channels; ++c) {
        const double v = std::clamp(img.at(y, x, c), 0.0, 1.0);
        row[x * img.channels + c] = static_cast<png_byte>(std::lround(v * 255.0));
      }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image read_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("read_png: cannot open " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("read_png: libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("read_png: libpng error reading " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  // Normalize every input to 8-bit gray or RGB.
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_packing(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY &&
      png_get_bit_depth(png, info) < 8)
    png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);

  Image img;
  img.width = png_get_image_width(png, info);
  img.height = png_get_image_height(png, info);
  img.channels = png_get_channels(png, info);
  if (img.channels != 1 && img.channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("read_png: unsupported channel count in " + path);
  }
  img.pixels.resize(img.width * img.height * img.channels);

  std::vector<png_byte> row(img.width * img.channels);
  for (std::size_t y = 0; y < img.height; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (std::size_t i = 0; i < row.size(); ++i)
      img.pixels[y * row.size() + i] = static_cast<double>(row[i]) / 255.0;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_f32_blob(const std::string& path, const std::vector<double>& values) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("write_f32_blob: cannot open " + path);
  for (double v : values) {
    const float x = static_cast<float>(v);
    f.write(reinterpret_cast<const char*>(&x), sizeof(float));
  }
  if (!f) throw IoError("write_f32_blob: write failed for " + path);
}

std::vector<double> read_f32_blob(const std::string& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw IoError("read_f32_blob: cannot open " + path);
  const auto bytes = static_cast<std::size_t>(f.tellg());
  if (bytes % sizeof(float) != 0)
    throw IoError("read_f32_blob: size not a multiple of 4 in " + path);
  f.seekg(0);
  std::vector<float> raw(bytes / sizeof(float));
  f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(bytes));
  if (!f) throw IoError("read_f32_blob: short read from " + path);
  return std::vector<double>(raw.begin(), raw.end());
}

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

void save_checkpoint(const std::string& prefix, const Checkpoint& ckpt) {
  nlohmann::json manifest;
  manifest["version"] = ckpt.version;
  manifest["step"] = ckpt.step;
  manifest["rng"] = ckpt.rng_state;
  manifest["tensors"] = nlohmann::json::array();

  std::ofstream blob(prefix + ".blob", std::ios::binary);
  if (!blob) throw IoError("save_checkpoint: cannot open " + prefix + ".blob");
  std::size_t offset = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    manifest["tensors"].push_back(
        {{"name", name}, {"dtype", "f64"}, {"shape", t.shape}, {"offset", offset}});
    blob.write(reinterpret_cast<const char*>(t.data.data()),
               static_cast<std::streamsize>(t.size() * sizeof(double)));
    offset += t.size() * sizeof(double);
  }
  if (!blob) throw IoError("save_checkpoint: blob write failed for " + prefix);
  blob.close();

  std::ofstream mf(prefix + ".json");
  if (!mf) throw IoError("save_checkpoint: cannot open " + prefix + ".json");
  mf << manifest.dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::string& prefix) {
  std::ifstream mf(prefix + ".json");
  if (!mf) throw IoError("load_checkpoint: cannot open " + prefix + ".json");
  nlohmann::json manifest;
  try {
    mf >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("load_checkpoint: bad manifest " + prefix + ".json: " + e.what());
  }

  std::ifstream blob(prefix + ".blob", std::ios::binary | std::ios::ate);
  if (!blob) throw IoError("load_checkpoint: cannot open " + prefix + ".blob");
  const auto blob_bytes = static_cast<std::size_t>(blob.tellg());

  Checkpoint ckpt;
  try {
    ckpt.version = manifest.at("version").get<int>();
    ckpt.step = manifest.at("step").get<int>();
    ckpt.rng_state = manifest.at("rng").get<std::string>();

    std::size_t expected = 0;
    for (const auto& e : manifest.at("tensors")) {
      if (e.at("dtype").get<std::string>() != "f64")
        throw IoError("load_checkpoint: unsupported dtype in " + prefix);
      Tensor t(e.at("shape").get<std::vector<std::size_t>>());
      if (e.at("offset").get<std::size_t>() != expected)
        throw IoError("load_checkpoint: non-contiguous tensor offsets in " + prefix);
      expected += t.size() * sizeof(double);
      ckpt.add(e.at("name").get<std::string>(), std::move(t));
    }
    if (expected != blob_bytes)
      throw IoError("load_checkpoint: blob size mismatch in " + prefix + " (manifest says " +
                    std::to_string(expected) + " bytes, blob has " +
                    std::to_string(blob_bytes) + ")");
  } catch (const nlohmann::json::exception& e) {
    throw IoError("load_checkpoint: bad manifest " + prefix + ".json: " + e.what());
  }

  blob.seekg(0);
  for (auto& [name, t] : ckpt.tensors) {
    blob.read(reinterpret_cast<char*>(t.data.data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!blob) throw IoError("load_checkpoint: short blob read from " + prefix);
  return ckpt;
}

}  // namespace recon
