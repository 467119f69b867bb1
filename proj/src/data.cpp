#include "fedpriv/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <string>

#include "fedpriv/errors.hpp"

namespace fedpriv {

void SyntheticSpec::validate() const {
  if (classes < 2) throw ParameterError("synthetic data needs at least 2 classes");
  if (n < classes) throw ParameterError("synthetic data needs n >= classes");
  if (d == 0) throw ParameterError("synthetic data needs d >= 1");
  if (!(separation > 0.0)) throw ParameterError("separation must be > 0");
  if (!(noise_std >= 0.0)) throw ParameterError("noise_std must be >= 0");
}

void PartitionSpec::validate() const {
  if (n_clients == 0) throw ParameterError("partition needs at least one client");
  if (kind == PartitionKind::kDirichlet && !(alpha > 0.0)) {
    throw ParameterError("dirichlet alpha must be > 0");
  }
}

Dataset gen_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<std::vector<double>> means(spec.classes, std::vector<double>(spec.d, 0.0));
  const double radius = spec.separation / std::sqrt(2.0);
  for (std::size_t c = 0; c < spec.classes; ++c) {
    if (spec.classes <= spec.d) {
      means[c][c] = radius;
    } else {
      double norm = 0.0;
      for (double& v : means[c]) {
        v = gauss(rng);
        norm += v * v;
      }
      for (double& v : means[c]) v *= radius / std::sqrt(norm);
    }
  }

  std::vector<std::uint32_t> labels(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) labels[i] = static_cast<std::uint32_t>(i % spec.classes);
  std::shuffle(labels.begin(), labels.end(), rng);

  Dataset ds;
  ds.dim = spec.d;
  ds.num_classes = spec.classes;
  ds.features.reserve(spec.n * spec.d);
  std::vector<double> x(spec.d);
  for (std::uint32_t y : labels) {
    for (std::size_t j = 0; j < spec.d; ++j) x[j] = means[y][j] + spec.noise_std * gauss(rng);
    ds.push_back(x, y);
  }
  return ds;
}

Dataset subset_rows(const Dataset& data, const std::vector<std::size_t>& rows) {
  Dataset out;
  out.dim = data.dim;
  out.num_classes = data.num_classes;
  out.features.reserve(rows.size() * data.dim);
  for (std::size_t r : rows) out.push_back(data.row(r), data.labels[r]);
  return out;
}

std::vector<Dataset> partition(const Dataset& data, const PartitionSpec& spec, std::uint64_t seed) {
  spec.validate();
  const std::size_t k = spec.n_clients;
  if (k > data.size()) {
    throw ParameterError("cannot split " + std::to_string(data.size()) + " samples across " +
                         std::to_string(k) + " clients");
  }
  std::mt19937_64 rng(seed);
  std::vector<std::vector<std::size_t>> shards(k);

  if (spec.kind == PartitionKind::kIid) {
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i = 0; i < order.size(); ++i) shards[i % k].push_back(order[i]);
  } else {
    std::gamma_distribution<double> gamma(spec.alpha, 1.0);
    for (std::size_t c = 0; c < data.num_classes; ++c) {
      std::vector<std::size_t> members;
      for (std::size_t i = 0; i < data.size(); ++i) {
        if (data.labels[i] == c) members.push_back(i);
      }
      std::shuffle(members.begin(), members.end(), rng);
      std::vector<double> p(k);
      double total = 0.0;
      for (double& v : p) {
        v = gamma(rng);
        total += v;
      }
      if (!(total > 0.0)) {
        // Every draw underflowed; fall back to one random owner.
        std::fill(p.begin(), p.end(), 0.0);
        p[rng() % k] = total = 1.0;
      }
      double cum = 0.0;
      std::size_t start = 0;
      for (std::size_t j = 0; j < k; ++j) {
        cum += p[j] / total;
        const std::size_t stop =
            j + 1 == k ? members.size()
                       : std::min(members.size(), static_cast<std::size_t>(std::floor(
                                                      cum * static_cast<double>(members.size()))));
        for (std::size_t i = start; i < std::max(start, stop); ++i) shards[j].push_back(members[i]);
        start = std::max(start, stop);
      }
    }
    // Give empty clients one row from the currently largest shard.
    for (std::size_t j = 0; j < k; ++j) {
      if (!shards[j].empty()) continue;
      auto largest = std::max_element(shards.begin(), shards.end(),
                                      [](const auto& a, const auto& b) { return a.size() < b.size(); });
      shards[j].push_back(largest->back());
      largest->pop_back();
    }
  }

  std::vector<Dataset> out;
  out.reserve(k);
  for (auto& rows : shards) {
    std::sort(rows.begin(), rows.end());
    out.push_back(subset_rows(data, rows));
  }
  return out;
}

Split train_test_split(const Dataset& data, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
    throw ParameterError("test fraction must lie in [0, 1)");
  }
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_test =
      static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(data.size())));
  std::vector<std::size_t> train(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_test));
  std::vector<std::size_t> test(order.end() - static_cast<std::ptrdiff_t>(n_test), order.end());
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {subset_rows(data, train), subset_rows(data, test)};
}

namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& buf, std::size_t& pos,
                        const std::string& what) {
  if (pos + 4 > buf.size()) throw FormatError(what + ": truncated header");
  const std::uint32_t v = (std::uint32_t{buf[pos]} << 24) | (std::uint32_t{buf[pos + 1]} << 16) |
                          (std::uint32_t{buf[pos + 2]} << 8) | std::uint32_t{buf[pos + 3]};
  pos += 4;
  return v;
}

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

}  // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto img = read_file(images);
  const auto lab = read_file(labels);

  std::size_t ip = 0;
  if (const auto magic = read_be32(img, ip, "images"); magic != kImageMagic) {
    throw FormatError("images: bad magic " + std::to_string(magic));
  }
  const std::uint32_t count = read_be32(img, ip, "images");
  const std::uint32_t rows = read_be32(img, ip, "images");
  const std::uint32_t cols = read_be32(img, ip, "images");
  const std::uint64_t pixels = std::uint64_t{count} * rows * cols;
  if (img.size() - ip != pixels) {
    throw FormatError("images: expected " + std::to_string(pixels) + " pixel bytes, found " +
                      std::to_string(img.size() - ip));
  }

  std::size_t lp = 0;
  if (const auto magic = read_be32(lab, lp, "labels"); magic != kLabelMagic) {
    throw FormatError("labels: bad magic " + std::to_string(magic));
  }
  const std::uint32_t label_count = read_be32(lab, lp, "labels");
  if (label_count != count) throw FormatError("image and label counts differ");
  if (lab.size() - lp != label_count) throw FormatError("labels: payload size mismatch");

  Dataset ds;
  ds.dim = std::size_t{rows} * cols;
  ds.features.reserve(pixels);
  std::uint32_t max_label = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    for (std::size_t j = 0; j < ds.dim; ++j) {
      ds.features.push_back(static_cast<double>(img[ip + i * ds.dim + j]) / 255.0);
    }
    const std::uint32_t y = lab[lp + i];
    ds.labels.push_back(y);
    max_label = std::max(max_label, y);
  }
  ds.num_classes = count == 0 ? 0 : max_label + 1;
  return ds;
}

}  // namespace fedpriv
