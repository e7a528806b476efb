#pragma once

#include <span>
#include <vector>

#include "pmia/cdm.hpp"
#include "pmia/data.hpp"
#include "pmia/numerics.hpp"

namespace pmia::testing {

inline constexpr CdmArch kAllArchs[] = {CdmArch::NeuralCD, CdmArch::Kscd, CdmArch::Kancd};

inline SyntheticData small_synthetic(std::uint64_t seed = 1, int students = 80, int questions = 10, int kcs = 4) {
  SyntheticSpec s;
  s.n_students = students;
  s.n_questions = questions;
  s.n_kcs = kcs;
  s.seed = seed;
  return generate_synthetic(s);
}

inline CdmConfig small_cdm(CdmArch arch, std::uint64_t seed = 0, int epochs = 5) {
  CdmConfig c;
  c.arch = arch;
  c.latent_dim = 6;
  c.hidden1 = 12;
  c.hidden2 = 6;
  c.epochs = epochs;
  c.seed = seed;
  return c;
}

/// Fresh model whose parameters are jittered away from initialization,
/// then projected back onto the monotone constraint.
inline CdmModel jittered_model(CdmArch arch, const QMatrix& q, int n_students, std::uint64_t seed, double scale = 0.5) {
  auto m = CdmModel::create(small_cdm(arch, seed), q, n_students);
  Rng r(seed, 77);
  for (double& v : m.params().flat_values()) v += scale * r.normal();
  m.clamp_monotone();
  return m;
}

/// Candidate records whose gradient touches only parameters with positive
/// importance under `covering`.
inline std::vector<InteractionRecord> covered_records(const CdmModel& m, std::span<const InteractionRecord> candidates,
                                                      const std::vector<double>& covering_fisher) {
  std::vector<InteractionRecord> out;
  for (const auto& r : candidates) {
    std::vector<double> g(m.params().size(), 0.0);
    m.accumulate_gradient(r, 1.0, g);
    bool covered = true;
    for (std::size_t k = 0; k < g.size() && covered; ++k) covered = g[k] == 0.0 || covering_fisher[k] > 0.0;
    if (covered) out.push_back(r);
  }
  return out;
}

}  // namespace pmia::testing
