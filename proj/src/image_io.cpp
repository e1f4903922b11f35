#include "clickforge/image_io.hpp"

#include <fcntl.h>
#include <png.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <sstream>

namespace clickforge {

namespace fs = std::filesystem;

namespace {

struct PngImage {
  png_image header{};
  PngImage() { header.version = PNG_IMAGE_VERSION; }
  ~PngImage() { png_image_free(&header); }
  PngImage(const PngImage&) = delete;
  PngImage& operator=(const PngImage&) = delete;
};

Bytes encode_png(int height, int width, png_uint_32 format, const std::uint8_t* data) {
  PngImage png;
  png.header.width = static_cast<png_uint_32>(width);
  png.header.height = static_cast<png_uint_32>(height);
  png.header.format = format;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&png.header, nullptr, &size, 0, data, 0, nullptr))
    throw FormatError(std::string("png encode failed: ") + png.header.message);
  Bytes out(size);
  if (!png_image_write_to_memory(&png.header, out.data(), &size, 0, data, 0, nullptr))
    throw FormatError(std::string("png encode failed: ") + png.header.message);
  out.resize(size);
  return out;
}

struct Decoded {
  int height = 0;
  int width = 0;
  Bytes data;
};

Decoded decode_png(const Bytes& bytes, png_uint_32 format, const char* what) {
  PngImage png;
  if (bytes.empty() || !png_image_begin_read_from_memory(&png.header, bytes.data(), bytes.size()))
    throw FormatError(std::string(what) + ": undecodable png" +
                      (png.header.message[0] ? std::string(" (") + png.header.message + ")" : ""));
  png.header.format = format;
  Decoded out;
  out.height = static_cast<int>(png.header.height);
  out.width = static_cast<int>(png.header.width);
  out.data.resize(PNG_IMAGE_SIZE(png.header));
  if (!png_image_finish_read(&png.header, nullptr, out.data.data(), 0, nullptr))
    throw FormatError(std::string(what) + ": png decode failed (" + png.header.message + ")");
  return out;
}

std::string stem_name(std::size_t index, std::size_t count) {
  const int digits = std::max<int>(4, static_cast<int>(std::to_string(count).size()));
  std::ostringstream os;
  os << std::setw(digits) << std::setfill('0') << index;
  return os.str();
}

std::map<std::string, fs::path> png_stems(const fs::path& dir) {
  std::map<std::string, fs::path> out;
  if (!fs::is_directory(dir)) throw FormatError("dataset directory missing: " + dir.string());
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png")
      out.emplace(entry.path().stem().string(), entry.path());
  }
  return out;
}

}  // namespace

Bytes encode_image_png(const RasterImage& image) {
  Bytes rgb(static_cast<std::size_t>(image.height) * image.width * 3);
  for (Eigen::Index k = 0; k < image.pixels.cols(); ++k)
    for (int ch = 0; ch < 3; ++ch)
      rgb[k * 3 + ch] = static_cast<std::uint8_t>(std::lround(std::clamp(image.pixels(ch, k), 0.0f, 1.0f) * 255.0f));
  return encode_png(image.height, image.width, PNG_FORMAT_RGB, rgb.data());
}

RasterImage decode_image_png(const Bytes& png) {
  const Decoded d = decode_png(png, PNG_FORMAT_RGB, "image");
  RasterImage image(d.height, d.width);
  for (Eigen::Index k = 0; k < image.pixels.cols(); ++k)
    for (int ch = 0; ch < 3; ++ch) image.pixels(ch, k) = static_cast<float>(d.data[k * 3 + ch]) / 255.0f;
  return image;
}

Bytes encode_mask_png(const Mask& mask) {
  if (!is_binary(mask)) throw InvalidArgument("mask must be binary");
  Bytes gray(static_cast<std::size_t>(mask.size()));
  for (Eigen::Index r = 0; r < mask.rows(); ++r)
    for (Eigen::Index c = 0; c < mask.cols(); ++c) gray[r * mask.cols() + c] = mask(r, c) ? 255 : 0;
  return encode_png(static_cast<int>(mask.rows()), static_cast<int>(mask.cols()), PNG_FORMAT_GRAY, gray.data());
}

Mask decode_mask_png(const Bytes& png) {
  const Decoded d = decode_png(png, PNG_FORMAT_GRAY, "mask");
  Mask mask(d.height, d.width);
  for (int r = 0; r < d.height; ++r) {
    for (int c = 0; c < d.width; ++c) {
      const std::uint8_t v = d.data[static_cast<std::size_t>(r) * d.width + c];
      if (v != 0 && v != 255)
        throw FormatError("mask value " + std::to_string(v) + " at (" + std::to_string(r) + "," +
                          std::to_string(c) + ") is not 0 or 255");
      mask(r, c) = v ? 1 : 0;
    }
  }
  return mask;
}

Bytes read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_atomic(const fs::path& path, const Bytes& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  if (fd < 0) throw FormatError("cannot write " + tmp.string());
  std::size_t done = 0;
  while (done < bytes.size()) {
    const ssize_t n = ::write(fd, bytes.data() + done, bytes.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      ::close(fd);
      throw FormatError("write failed for " + tmp.string());
    }
    done += static_cast<std::size_t>(n);
  }
  const bool synced = ::fsync(fd) == 0;
  ::close(fd);
  if (!synced) throw FormatError("fsync failed for " + tmp.string());
  fs::rename(tmp, path);
}

void save_dataset(const Dataset& dataset, const fs::path& root) {
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& item = dataset[i];
    require_same_shape(item.mask, Mask(item.image.height, item.image.width), "save_dataset");
    const std::string name = stem_name(i, dataset.size()) + ".png";
    write_file_atomic(root / "images" / name, encode_image_png(item.image));
    write_file_atomic(root / "masks" / name, encode_mask_png(item.mask));
  }
}

Dataset load_dataset(const fs::path& root) {
  const auto images = png_stems(root / "images");
  const auto masks = png_stems(root / "masks");
  for (const auto& [stem, path] : masks) {
    if (!images.count(stem)) throw FormatError("mask '" + stem + "' has no paired image");
  }
  Dataset out;
  out.reserve(images.size());
  for (const auto& [stem, path] : images) {
    const auto it = masks.find(stem);
    if (it == masks.end()) throw FormatError("image '" + stem + "' has no paired mask");
    LabeledImage item;
    item.image = decode_image_png(read_file(path));
    try {
      item.mask = decode_mask_png(read_file(it->second));
    } catch (const FormatError& e) {
      throw FormatError("mask '" + stem + "': " + e.what());
    }
    if (item.mask.rows() != item.image.height || item.mask.cols() != item.image.width)
      throw DimensionError("mask '" + stem + "' dimensions differ from its image");
    out.push_back(std::move(item));
  }
  return out;
}

}  // namespace clickforge
