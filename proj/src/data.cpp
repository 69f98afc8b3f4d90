#include "probact/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "probact/error.hpp"
#include "probact/rng.hpp"

namespace probact::data {

namespace {

namespace fs = std::filesystem;

constexpr std::size_t kPixelsPerImage = 3 * 32 * 32;

// Stream tags so every consumer of the counter RNG draws from its own space.
constexpr std::uint32_t kShuffleTag = 0xba7c;
constexpr std::uint32_t kSubsetTag = 0x57a7;
constexpr std::uint32_t kPointTag = 0xda7a;
constexpr std::uint32_t kPatternTag = 0xc1a5;

std::vector<unsigned char> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) {
    throw FormatError("cannot open '" + path.string() + "'");
  }
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<unsigned char> bytes(size);
  in.read(reinterpret_cast<char*>(bytes.data()),
          static_cast<std::streamsize>(size));
  if (!in) throw FormatError("read of '" + path.string() + "' failed");
  return bytes;
}

// Appends records from one file. label_bytes is 1 (coarse-less) or 2 (the
// fine label is the second byte).
void append_records(const fs::path& path, std::size_t label_bytes,
                    std::size_t classes, std::vector<real>& pixels,
                    std::vector<int>& labels) {
  const std::vector<unsigned char> bytes = read_file(path);
  const std::size_t record = label_bytes + kPixelsPerImage;
  if (bytes.empty() || bytes.size() % record != 0) {
    const std::size_t whole = (bytes.size() / record) * record;
    char msg[256];
    std::snprintf(msg, sizeof(msg),
                  "'%s': size %zu is not a whole number of %zu-byte records "
                  "(partial record starts at byte %zu)",
                  path.string().c_str(), bytes.size(), record, whole);
    throw FormatError(msg);
  }
  const std::size_t count = bytes.size() / record;
  pixels.reserve(pixels.size() + count * kPixelsPerImage);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t off = i * record;
    const unsigned char label = bytes[off + label_bytes - 1];
    if (label >= classes) {
      char msg[256];
      std::snprintf(msg, sizeof(msg),
                    "'%s': label %u out of range at byte %zu",
                    path.string().c_str(), static_cast<unsigned>(label),
                    off + label_bytes - 1);
      throw FormatError(msg);
    }
    labels.push_back(label);
    const unsigned char* px = bytes.data() + off + label_bytes;
    for (std::size_t j = 0; j < kPixelsPerImage; ++j) {
      pixels.push_back(static_cast<real>(px[j]) * (real(1) / 255));
    }
  }
}

Dataset dataset_from(std::vector<real> pixels, std::vector<int> labels,
                     std::size_t classes) {
  const std::size_t n = labels.size();
  Dataset d;
  d.images = Tensor::from_values({n, 3, 32, 32}, std::move(pixels));
  d.labels = std::move(labels);
  d.classes = classes;
  return d;
}

fs::path resolve_dir(const std::string& dir, const char* probe,
                     const char* nested) {
  const fs::path base(dir);
  if (fs::exists(base / probe)) return base;
  if (fs::exists(base / nested / probe)) return base / nested;
  throw FormatError("no '" + std::string(probe) + "' under '" + dir + "'");
}

std::uint64_t draw_bits(std::uint32_t tag, std::uint64_t step,
                        std::uint64_t seed, std::uint64_t index) {
  return rng::bits_at(NoiseKey{tag, step, 0}, seed, index);
}

void seeded_shuffle(std::vector<std::size_t>& v, std::uint32_t tag,
                    std::uint64_t step, std::uint64_t seed) {
  if (v.size() < 2) return;
  std::uint64_t draw = 0;
  for (std::size_t i = v.size() - 1; i > 0; --i) {
    const std::uint64_t j = draw_bits(tag, step, seed, draw++) % (i + 1);
    std::swap(v[i], v[j]);
  }
}

}  // namespace

Shape Dataset::sample_shape() const {
  if (images.rank() != 4) {
    throw ShapeError("dataset images must be N,C,H,W");
  }
  return {images.extent(1), images.extent(2), images.extent(3)};
}

CifarData load_cifar(const std::string& dir, CifarVariant variant) {
  CifarData out;
  if (variant == CifarVariant::kCifar10) {
    const fs::path base = resolve_dir(dir, "data_batch_1.bin",
                                      "cifar-10-batches-bin");
    std::vector<real> pixels;
    std::vector<int> labels;
    for (int i = 1; i <= 5; ++i) {
      append_records(base / ("data_batch_" + std::to_string(i) + ".bin"), 1,
                     10, pixels, labels);
    }
    out.train = dataset_from(std::move(pixels), std::move(labels), 10);
    std::vector<real> tpx;
    std::vector<int> tlb;
    append_records(base / "test_batch.bin", 1, 10, tpx, tlb);
    out.test = dataset_from(std::move(tpx), std::move(tlb), 10);
  } else {
    const fs::path base = resolve_dir(dir, "train.bin", "cifar-100-binary");
    std::vector<real> pixels;
    std::vector<int> labels;
    append_records(base / "train.bin", 2, 100, pixels, labels);
    out.train = dataset_from(std::move(pixels), std::move(labels), 100);
    std::vector<real> tpx;
    std::vector<int> tlb;
    append_records(base / "test.bin", 2, 100, tpx, tlb);
    out.test = dataset_from(std::move(tpx), std::move(tlb), 100);
  }
  return out;
}

Dataset stratified_subset(const Dataset& d, double fraction,
                          std::uint64_t seed) {
  if (!(fraction > 0 && fraction <= 1)) {
    throw ArgumentError("subset fraction must lie in (0, 1]");
  }
  std::vector<std::vector<std::size_t>> per_class(d.classes);
  for (std::size_t i = 0; i < d.size(); ++i) {
    per_class[static_cast<std::size_t>(d.labels[i])].push_back(i);
  }
  std::vector<std::size_t> chosen;
  for (std::size_t c = 0; c < d.classes; ++c) {
    auto& members = per_class[c];
    const auto take = static_cast<std::size_t>(
        std::floor(fraction * static_cast<double>(members.size())));
    seeded_shuffle(members, kSubsetTag, c, seed);
    chosen.insert(chosen.end(), members.begin(), members.begin() + take);
  }
  std::sort(chosen.begin(), chosen.end());
  return gather_dataset(d, chosen);
}

Dataset synthetic_dataset(SyntheticKind kind, std::size_t n,
                          std::size_t classes, double noise,
                          std::uint64_t seed, std::size_t resolution) {
  if (classes < 2) throw ArgumentError("synthetic set needs >= 2 classes");
  if (n == 0 || n % classes != 0) {
    throw ArgumentError("sample count must divide evenly across classes");
  }
  Dataset d;
  d.classes = classes;
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    d.labels[i] = static_cast<int>(i % classes);
  }

  const auto normal = [&](std::uint64_t step, std::uint64_t element) {
    return rng::normal_at(NoiseKey{kPointTag, step, 0}, seed, element);
  };

  if (kind == SyntheticKind::kBlobs || kind == SyntheticKind::kSpirals) {
    const std::size_t per_class = n / classes;
    std::vector<real> values(n * 2);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = i % classes;
      const std::size_t rank_in_class = i / classes;
      double px, py;
      if (kind == SyntheticKind::kBlobs) {
        const double theta =
            2.0 * M_PI * static_cast<double>(c) / static_cast<double>(classes);
        px = 2.0 * std::cos(theta) + noise * normal(i, 0);
        py = 2.0 * std::sin(theta) + noise * normal(i, 1);
      } else {
        // 1.5 turns per arm; arms are offset copies of the same curve, so no
        // straight line separates them even with zero jitter.
        const double t = 3.0 * M_PI * (static_cast<double>(rank_in_class) +
                                       0.5) /
                         static_cast<double>(per_class);
        const double r = 0.2 + 1.8 * t / (3.0 * M_PI);
        const double theta = t + 2.0 * M_PI * static_cast<double>(c) /
                                     static_cast<double>(classes);
        px = r * std::cos(theta) + 0.3 * noise * normal(i, 0);
        py = r * std::sin(theta) + 0.3 * noise * normal(i, 1);
      }
      values[i * 2] = static_cast<real>(px);
      values[i * 2 + 1] = static_cast<real>(py);
    }
    d.images = Tensor::from_values({n, 2, 1, 1}, std::move(values));
    return d;
  }

  // image-blobs
  if (resolution == 0) throw ArgumentError("resolution must be positive");
  const std::size_t pixels = 3 * resolution * resolution;
  std::vector<real> patterns(classes * pixels);
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t j = 0; j < pixels; ++j) {
      const double u =
          rng::uniform_at(NoiseKey{kPatternTag, c, 0}, seed, j);
      patterns[c * pixels + j] = static_cast<real>(0.15 + 0.7 * u);
    }
  }
  Tensor images = Tensor::zeros({n, 3, resolution, resolution});
  real* out = images.mutable_data();
  const auto count = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < count; ++i) {
    const std::size_t c = static_cast<std::size_t>(i) % classes;
    const real* base = patterns.data() + c * pixels;
    real* row = out + static_cast<std::size_t>(i) * pixels;
    for (std::size_t j = 0; j < pixels; ++j) {
      const double v =
          base[j] +
          0.15 * noise * normal(static_cast<std::uint64_t>(i), 2 + j);
      row[j] = static_cast<real>(std::min(1.0, std::max(0.0, v)));
    }
  }
  d.images = std::move(images);
  return d;
}

std::vector<std::size_t> batch_order(std::size_t n, std::uint64_t shuffle_seed,
                                     std::uint64_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  seeded_shuffle(order, kShuffleTag, epoch, shuffle_seed);
  return order;
}

std::vector<std::vector<std::size_t>> batch_indices(std::size_t n,
                                                    std::size_t batch_size,
                                                    std::uint64_t shuffle_seed,
                                                    std::uint64_t epoch) {
  if (batch_size == 0) throw ArgumentError("batch size must be positive");
  const std::vector<std::size_t> order = batch_order(n, shuffle_seed, epoch);
  std::vector<std::vector<std::size_t>> out;
  out.reserve((n + batch_size - 1) / batch_size);
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

Batch gather(const Dataset& d, const std::vector<std::size_t>& indices) {
  const Shape sample = d.sample_shape();
  const std::size_t stride = shape_numel(sample);
  Tensor images =
      Tensor::zeros({indices.size(), sample[0], sample[1], sample[2]});
  real* out = images.mutable_data();
  const real* src = d.images.data();
  std::vector<int> labels(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t idx = indices[i];
    if (idx >= d.size()) throw ArgumentError("gather index out of range");
    std::copy(src + idx * stride, src + (idx + 1) * stride,
              out + i * stride);
    labels[i] = d.labels[idx];
  }
  return {std::move(images), std::move(labels)};
}

Dataset gather_dataset(const Dataset& d,
                       const std::vector<std::size_t>& indices) {
  Batch b = gather(d, indices);
  Dataset out;
  out.images = std::move(b.images);
  out.labels = std::move(b.labels);
  out.classes = d.classes;
  return out;
}

}  // namespace probact::data
