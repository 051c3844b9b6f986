#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include "bslb/bayes.hpp"
#include "bslb/ensemble.hpp"
#include "bslb/network.hpp"

namespace bslb {

// Binary layout (all integers and floats little-endian):
//   "BSLB" | u32 version | u32 payload kind
//   u32 class_count | u32 layer_count
//   per layer: u64 input_width | u64 output_width | u8 has_bias | u8 activation
//   u64 array_count | per array: u64 length | length x f64

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class CheckpointKind : std::uint32_t {
  weights = 0,
  vi_ensemble = 1,
  hmc_ensemble = 2,
  variational = 3,  // two arrays: mu, rho
};

struct Checkpoint {
  NetworkSpec spec;
  CheckpointKind kind = CheckpointKind::weights;
  std::optional<Weights> weights;
  std::optional<PosteriorEnsemble> ensemble;
  std::optional<VariationalPosterior> variational;
};

void save_checkpoint(const std::filesystem::path& path, const NetworkSpec& spec, const Weights& w);
void save_checkpoint(const std::filesystem::path& path, const NetworkSpec& spec,
                     const PosteriorEnsemble& ensemble);
void save_checkpoint(const std::filesystem::path& path, const NetworkSpec& spec,
                     const VariationalPosterior& posterior);

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace bslb
