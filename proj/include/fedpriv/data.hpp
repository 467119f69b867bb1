#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "fedpriv/model.hpp"

namespace fedpriv {

struct SyntheticSpec {
  std::size_t n = 4000;
  std::size_t d = 20;
  std::size_t classes = 4;
  double separation = 3.0;
  double noise_std = 1.0;

  void validate() const;
};

enum class PartitionKind { kIid, kDirichlet };

struct PartitionSpec {
  PartitionKind kind = PartitionKind::kDirichlet;
  double alpha = 0.3;
  std::size_t n_clients = 10;

  void validate() const;
};

// Isotropic Gaussian clusters. Class means sit on scaled coordinate axes (or
// random directions when classes > d) with pairwise distance `separation`.
Dataset gen_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

// Disjoint shards whose union is the input. Every shard is nonempty.
std::vector<Dataset> partition(const Dataset& data, const PartitionSpec& spec, std::uint64_t seed);

// Deterministic shuffle then split off the trailing `fraction` of rows.
struct Split {
  Dataset train;
  Dataset test;
};
Split train_test_split(const Dataset& data, double test_fraction, std::uint64_t seed);

Dataset subset_rows(const Dataset& data, const std::vector<std::size_t>& rows);

// Reads an IDX image file (magic 0x00000803) and label file (0x00000801).
// Pixels are scaled by 1/255.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

}  // namespace fedpriv
