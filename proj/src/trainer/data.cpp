#include "naslab/trainer/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "naslab/core/error.hpp"
#include "naslab/core/rng.hpp"

namespace naslab {

namespace {

constexpr int kCifarSide = 32;
constexpr int kCifarPixels = 3 * kCifarSide * kCifarSide;
constexpr int kCifarRecord = 1 + kCifarPixels;

struct Blob {
  double cy, cx, radius;
  std::vector<double> color;
};

Blob random_blob(Rng& rng, int channels, int h, int w) {
  Blob b{rng.uniform(0.0, h - 1.0), rng.uniform(0.0, w - 1.0), rng.uniform(1.2, 3.0), {}};
  for (int c = 0; c < channels; ++c) b.color.push_back(rng.uniform(-1.0, 1.0));
  return b;
}

void paint(double* img, int channels, int h, int w, const Blob& b, double amplitude, double dy, double dx) {
  const double inv = 1.0 / (2.0 * b.radius * b.radius);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double ry = y - (b.cy + dy), rx = x - (b.cx + dx);
      const double g = amplitude * std::exp(-(ry * ry + rx * rx) * inv);
      for (int c = 0; c < channels; ++c) img[(c * h + y) * w + x] += g * b.color[static_cast<std::size_t>(c)];
    }
}

Dataset sample_synthetic(const DatasetSpec& spec, const std::vector<std::vector<Blob>>& protos, int count, Rng rng) {
  const int ch = spec.input[0], h = spec.input[1], w = spec.input[2];
  const int plane = ch * h * w;
  Dataset out;
  out.num_classes = spec.num_classes;
  out.images = Tensor({count, ch, h, w});
  std::vector<int> order = rng.permutation(count);
  out.labels.resize(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) out.labels[static_cast<std::size_t>(order[i])] = i % spec.num_classes;
  for (int i = 0; i < count; ++i) {
    double* img = out.images.data() + static_cast<std::size_t>(i) * plane;
    for (int p = 0; p < plane; ++p) img[p] = 0.5 + rng.normal(0.0, spec.noise);
    const double sy = rng.uniform(-spec.jitter, spec.jitter), sx = rng.uniform(-spec.jitter, spec.jitter);
    for (const Blob& b : protos[static_cast<std::size_t>(out.labels[i])]) {
      const double dy = rng.uniform(-0.75, 0.75), dx = rng.uniform(-0.75, 0.75);
      paint(img, ch, h, w, b, spec.contrast * rng.uniform(0.6, 1.0), sy + dy, sx + dx);
    }
    for (int d = 0; d < spec.distractors; ++d)
      paint(img, ch, h, w, random_blob(rng, ch, h, w), spec.contrast * rng.uniform(0.6, 1.0), 0.0, 0.0);
    for (int p = 0; p < plane; ++p) img[p] = std::clamp(img[p], 0.0, 1.0);
  }
  return out;
}

Dataset read_cifar_bytes(const std::vector<unsigned char>& bytes) {
  if (bytes.size() % kCifarRecord != 0) {
    const std::size_t tail = bytes.size() - bytes.size() % kCifarRecord;
    throw ParseError("truncated CIFAR-10 record: " + std::to_string(bytes.size() - tail) + " of " +
                         std::to_string(kCifarRecord) + " bytes",
                     tail);
  }
  const int n = static_cast<int>(bytes.size() / kCifarRecord);
  Dataset out;
  out.num_classes = 10;
  out.images = Tensor({n, 3, kCifarSide, kCifarSide});
  out.labels.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const std::size_t at = static_cast<std::size_t>(i) * kCifarRecord;
    if (bytes[at] > 9) throw ParseError("CIFAR-10 label " + std::to_string(bytes[at]) + " outside [0, 10)", at);
    out.labels[static_cast<std::size_t>(i)] = bytes[at];
    double* img = out.images.data() + static_cast<std::size_t>(i) * kCifarPixels;
    for (int p = 0; p < kCifarPixels; ++p) img[p] = bytes[at + 1 + p] / 255.0;
  }
  return out;
}

Dataset concat(const std::vector<Dataset>& parts) {
  Dataset out;
  out.num_classes = parts.front().num_classes;
  Shape shape = parts.front().images.shape();
  shape[0] = 0;
  std::vector<double> values;
  for (const Dataset& p : parts) {
    shape[0] += p.size();
    values.insert(values.end(), p.images.values().begin(), p.images.values().end());
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
  }
  out.images = Tensor(shape, std::move(values));
  return out;
}

Dataset pick(const Dataset& all, int count, std::uint64_t seed, const char* what) {
  if (count > all.size())
    throw ConfigError(std::string("requested ") + std::to_string(count) + " " + what + " samples, only " +
                      std::to_string(all.size()) + " available");
  return all.subset(subset_rows(all.size(), count, seed));
}

}  // namespace

void DatasetSpec::validate() const {
  if (num_classes < 2) throw ConfigError("dataset needs num_classes >= 2");
  if (input.size() != 3 || input[0] < 1 || input[1] < 1 || input[2] < 1)
    throw ConfigError("dataset input must be {C, H, W} with positive entries");
  if (train_size < 1 || test_size < 0) throw ConfigError("dataset split sizes must be positive");
  if (source != "synthetic" && source != "cifar10") throw ConfigError("unknown dataset source '" + source + "'");
  if (source == "cifar10" && (num_classes != 10 || input[0] != 3 || kCifarSide % input[1] != 0 ||
                              input[1] != input[2]))
    throw ConfigError("cifar10 needs 10 classes, 3 channels and a square side dividing 32");
}

DataSplit make_synthetic(const DatasetSpec& spec) {
  spec.validate();
  Rng root(spec.seed);
  Rng proto_rng = root.fork(1);
  std::vector<std::vector<Blob>> protos(static_cast<std::size_t>(spec.num_classes));
  // Every class draws its blob colours from one shared palette, so classes differ in layout
  // and size rather than in mean colour.
  std::vector<std::vector<double>> palette;
  for (int b = 0; b < spec.blobs_per_class; ++b)
    palette.push_back(random_blob(proto_rng, spec.input[0], spec.input[1], spec.input[2]).color);
  for (auto& blobs : protos) {
    std::vector<int> colours = proto_rng.permutation(spec.blobs_per_class);
    for (int b = 0; b < spec.blobs_per_class; ++b) {
      blobs.push_back(random_blob(proto_rng, spec.input[0], spec.input[1], spec.input[2]));
      blobs.back().color = palette[static_cast<std::size_t>(colours[static_cast<std::size_t>(b)])];
    }
  }
  DataSplit split;
  split.train = sample_synthetic(spec, protos, spec.train_size, root.fork(2));
  split.test = sample_synthetic(spec, protos, spec.test_size, root.fork(3));
  return split;
}

std::vector<int> subset_rows(int total, int count, std::uint64_t seed) {
  Rng rng(seed);
  return rng.sample_without_replacement(total, count);
}

Dataset read_cifar10_batch(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open CIFAR-10 batch " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return read_cifar_bytes(bytes);
}

Dataset downsample(const Dataset& data, int factor) {
  if (factor == 1) return data;
  const int n = data.images.dim(0), ch = data.images.dim(1), h = data.images.dim(2), w = data.images.dim(3);
  if (factor < 1 || h % factor != 0 || w % factor != 0) throw InputError("downsample factor must divide H and W");
  const int oh = h / factor, ow = w / factor;
  Dataset out;
  out.num_classes = data.num_classes;
  out.labels = data.labels;
  out.images = Tensor({n, ch, oh, ow});
  const double inv = 1.0 / (factor * factor);
  for (int p = 0; p < n * ch; ++p) {
    const double* src = data.images.data() + static_cast<std::size_t>(p) * h * w;
    double* dst = out.images.data() + static_cast<std::size_t>(p) * oh * ow;
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        double s = 0.0;
        for (int i = 0; i < factor; ++i)
          for (int j = 0; j < factor; ++j) s += src[(y * factor + i) * w + x * factor + j];
        dst[y * ow + x] = s * inv;
      }
  }
  return out;
}

DataSplit load_cifar10(const DatasetSpec& spec) {
  spec.validate();
  namespace fs = std::filesystem;
  const fs::path dir(spec.path);
  std::vector<Dataset> train_parts;
  for (int b = 1; b <= 5; ++b) {
    const fs::path file = dir / ("data_batch_" + std::to_string(b) + ".bin");
    if (fs::exists(file)) train_parts.push_back(read_cifar10_batch(file.string()));
  }
  if (train_parts.empty()) throw InputError("no CIFAR-10 training batches under " + spec.path);
  const fs::path test_file = dir / "test_batch.bin";
  if (!fs::exists(test_file)) throw InputError("missing " + test_file.string());
  DataSplit split;
  split.train = pick(concat(train_parts), spec.train_size, spec.seed, "train");
  split.test = pick(read_cifar10_batch(test_file.string()), spec.test_size, spec.seed + 1, "test");
  const int factor = kCifarSide / spec.input[1];
  split.train = downsample(split.train, factor);
  split.test = downsample(split.test, factor);
  return split;
}

DataSplit load_dataset(const DatasetSpec& spec, const std::string& data_root) {
  if (spec.source == "synthetic") return make_synthetic(spec);
  DatasetSpec resolved = spec;
  namespace fs = std::filesystem;
  if (!data_root.empty() && (spec.path.empty() || fs::path(spec.path).is_relative()))
    resolved.path = (fs::path(data_root) / spec.path).string();
  return load_cifar10(resolved);
}

void to_json(nlohmann::json& j, const DatasetSpec& s) {
  j = {{"name", s.name},
       {"source", s.source},
       {"path", s.path},
       {"num_classes", s.num_classes},
       {"input", s.input},
       {"train_size", s.train_size},
       {"test_size", s.test_size},
       {"seed", s.seed},
       {"blobs_per_class", s.blobs_per_class},
       {"distractors", s.distractors},
       {"contrast", s.contrast},
       {"noise", s.noise},
       {"jitter", s.jitter}};
}

void from_json(const nlohmann::json& j, DatasetSpec& s) {
  s.name = j.value("name", s.name);
  s.source = j.value("source", s.source);
  s.path = j.value("path", s.path);
  s.num_classes = j.value("num_classes", s.num_classes);
  s.input = j.value("input", s.input);
  s.train_size = j.value("train_size", s.train_size);
  s.test_size = j.value("test_size", s.test_size);
  s.seed = j.value("seed", s.seed);
  s.blobs_per_class = j.value("blobs_per_class", s.blobs_per_class);
  s.distractors = j.value("distractors", s.distractors);
  s.contrast = j.value("contrast", s.contrast);
  s.noise = j.value("noise", s.noise);
  s.jitter = j.value("jitter", s.jitter);
}

}  // namespace naslab
