#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bslb/network.hpp"

namespace bslb {

enum class InferenceMethod { vi, hmc };

inline const char* to_string(InferenceMethod m) { return m == InferenceMethod::vi ? "vi" : "hmc"; }

struct EnsembleMeta {
  std::uint64_t seed = 0;
  // HMC bookkeeping
  int burn_in = 0;
  int thinning = 1;
  double acceptance_rate = 0.0;
  bool poorly_tuned = false;
  // VI bookkeeping
  std::vector<double> elbo_trace;
};

/// Weight samples standing in for the posterior p(w|D).
struct PosteriorEnsemble {
  std::vector<Weights> samples;
  InferenceMethod method = InferenceMethod::hmc;
  EnsembleMeta meta;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }

  /// n samples picked at evenly spaced positions (i * size / n).
  PosteriorEnsemble subset(std::size_t n) const {
    if (n < 1 || n > samples.size())
      throw ParameterError("cannot take " + std::to_string(n) + " of " +
                           std::to_string(samples.size()) + " samples");
    PosteriorEnsemble out;
    out.method = method;
    out.meta = meta;
    out.samples.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.samples.push_back(samples[i * samples.size() / n]);
    return out;
  }
};

inline void require_nonempty(const PosteriorEnsemble& ensemble) {
  if (ensemble.empty()) throw ParameterError("posterior ensemble is empty");
}

}  // namespace bslb
