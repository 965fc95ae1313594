#include "glann/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "glann/errors.hpp"
#include "glann/image_io.hpp"
#include "glann/rng.hpp"

namespace glann {

namespace {

namespace fs = std::filesystem;

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw FormatError("cannot open file: " + path);
  auto size = static_cast<size_t>(f.tellg());
  f.seekg(0);
  std::vector<uint8_t> bytes(size);
  f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!f) throw FormatError("short read from: " + path);
  return bytes;
}

uint32_t be32(const uint8_t* p) {
  return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
         (static_cast<uint32_t>(p[2]) << 8) | p[3];
}

[[noreturn]] void bad_magic(const std::string& path, uint32_t magic, uint32_t want) {
  char buf[128];
  std::snprintf(buf, sizeof(buf),
                "%s: bad IDX magic 0x%08x (bytes %02x %02x %02x %02x), expected 0x%08x",
                path.c_str(), magic, magic >> 24, (magic >> 16) & 0xff, (magic >> 8) & 0xff,
                magic & 0xff, want);
  throw FormatError(buf);
}

}  // namespace

DatasetHandle DatasetHandle::load_idx(const std::string& path, uint64_t seed, int64_t limit) {
  auto bytes = read_file(path);
  if (bytes.size() < 16) throw FormatError(path + ": IDX header truncated");
  uint32_t magic = be32(bytes.data());
  if (magic != 0x00000803u) bad_magic(path, magic, 0x00000803u);
  int64_t count = be32(bytes.data() + 4);
  int64_t rows = be32(bytes.data() + 8);
  int64_t cols = be32(bytes.data() + 12);
  if (count <= 0 || rows <= 0 || cols <= 0)
    throw FormatError(path + ": degenerate IDX dimensions");
  size_t need = 16 + static_cast<size_t>(count) * rows * cols;
  if (bytes.size() != need)
    throw FormatError(path + ": payload length mismatch: header promises " +
                      std::to_string(need) + " bytes, file has " + std::to_string(bytes.size()));
  if (limit > 0 && limit < count) count = limit;

  DatasetHandle d;
  d.images_ = Tensor({count, 1, rows, cols});
  const uint8_t* p = bytes.data() + 16;
  for (int64_t i = 0; i < count * rows * cols; ++i)
    d.images_[i] = static_cast<float>(p[i]) / 255.0f * 2.0f - 1.0f;
  d.source_ = path;
  d.seed_ = seed;
  return d;
}

DatasetHandle DatasetHandle::load_image_dir(const std::string& path, int64_t size,
                                            uint64_t seed) {
  if (!fs::is_directory(path)) throw FormatError("not a directory: " + path);
  if (size < 1) throw ArgumentError("load_image_dir: size must be >= 1");
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(path))
    if (e.is_regular_file()) names.push_back(e.path().string());
  std::sort(names.begin(), names.end());
  if (names.empty()) throw FormatError("empty directory: " + path);

  std::vector<Tensor> images;
  for (const auto& name : names) {
    auto img = load_image(name);
    if (!img) {
      std::fprintf(stderr, "warning: skipping undecodable file %s\n", name.c_str());
      continue;
    }
    int64_t H = img->dim(1), W = img->dim(2);
    // scale the short side to `size`, then keep the central window
    int64_t th = size, tw = size;
    if (H < W)
      tw = std::max<int64_t>(size, (W * size + H / 2) / H);
    else
      th = std::max<int64_t>(size, (H * size + W / 2) / W);
    Tensor scaled = (th == H && tw == W) ? *img : resize_bilinear(*img, th, tw);
    images.push_back(center_crop(scaled, size, size));
  }
  if (images.empty()) throw FormatError("no decodable images in: " + path);
  int64_t C = images.front().dim(0);
  for (const auto& t : images)
    if (t.dim(0) != C)
      throw FormatError("mixed channel counts in directory: " + path);

  DatasetHandle d;
  d.images_ = Tensor({static_cast<int64_t>(images.size()), C, size, size});
  int64_t plane = C * size * size;
  for (size_t i = 0; i < images.size(); ++i)
    std::copy(images[i].data(), images[i].data() + plane,
              d.images_.data() + static_cast<int64_t>(i) * plane);
  d.source_ = path;
  d.seed_ = seed;
  return d;
}

DatasetHandle DatasetHandle::from_tensor(Tensor images, std::string name, uint64_t seed) {
  if (images.ndim() != 4) throw ArgumentError("from_tensor: expected (T,C,H,W)");
  if (images.dim(0) < 1) throw ArgumentError("from_tensor: empty dataset");
  DatasetHandle d;
  d.images_ = std::move(images);
  d.source_ = std::move(name);
  d.seed_ = seed;
  return d;
}

ImageBatch DatasetHandle::batch(const std::vector<int64_t>& ids) const {
  int64_t plane = channels() * height() * width();
  ImageBatch b;
  b.pixels = Tensor({static_cast<int64_t>(ids.size()), channels(), height(), width()});
  b.ids = ids;
  for (size_t i = 0; i < ids.size(); ++i) {
    int64_t id = ids[i];
    if (id < 0 || id >= count())
      throw ArgumentError("dataset id " + std::to_string(id) + " out of range [0," +
                          std::to_string(count()) + ")");
    std::copy(images_.data() + id * plane, images_.data() + (id + 1) * plane,
              b.pixels.data() + static_cast<int64_t>(i) * plane);
  }
  return b;
}

std::vector<int64_t> epoch_order(const DatasetHandle& data, int64_t epoch) {
  std::vector<int64_t> order(static_cast<size_t>(data.count()));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(data.seed(), "epoch-order", static_cast<uint64_t>(epoch)));
  rng.shuffle(order);
  return order;
}

std::vector<ImageBatch> minibatches(const DatasetHandle& data, int64_t batch, int64_t epoch) {
  if (batch <= 0) throw ArgumentError("minibatches: batch must be positive");
  if (batch > data.count())
    throw ArgumentError("minibatches: batch " + std::to_string(batch) + " exceeds dataset size " +
                        std::to_string(data.count()));
  std::vector<int64_t> order = epoch_order(data, epoch);
  std::vector<ImageBatch> out;
  for (size_t at = 0; at < order.size(); at += static_cast<size_t>(batch)) {
    size_t end = std::min(order.size(), at + static_cast<size_t>(batch));
    out.push_back(data.batch(std::vector<int64_t>(order.begin() + static_cast<int64_t>(at),
                                                  order.begin() + static_cast<int64_t>(end))));
  }
  return out;
}

std::vector<int> load_idx_labels(const std::string& path, int64_t limit) {
  auto bytes = read_file(path);
  if (bytes.size() < 8) throw FormatError(path + ": IDX label header truncated");
  uint32_t magic = be32(bytes.data());
  if (magic != 0x00000801u) bad_magic(path, magic, 0x00000801u);
  int64_t count = be32(bytes.data() + 4);
  if (bytes.size() != 8 + static_cast<size_t>(count))
    throw FormatError(path + ": label payload length mismatch");
  if (limit > 0 && limit < count) count = limit;
  std::vector<int> labels(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) labels[static_cast<size_t>(i)] = bytes[8 + static_cast<size_t>(i)];
  return labels;
}

}  // namespace glann
