#pragma once

// Retain cross-entropy, forget-logit uniformity and inverse cross-entropy,
// plus their weighted sum.

#include <cstddef>
#include <span>

#include "novo/batch_protocol.hpp"
#include "novo/tensor.hpp"

namespace novo {

struct LossWeights {
  double beta = 1.0;   // retain CE
  double gamma = 1.0;  // forget-logit MSE
  double tau = 1.0;    // inverse CE

  // Throws ConfigError on a negative weight.
  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

inline constexpr double kInverseCeEps = 1e-3;

template <typename T>
struct LossTerms {
  BasicTensor<T> l_ce;
  BasicTensor<T> l_u;
  BasicTensor<T> l_i;
  BasicTensor<T> total;
  std::size_t n_retain = 0;
  std::size_t n_forget = 0;
};

// 1 iff v > 0.
int indicator(double v);

// Mean CE over samples whose label is in A. Returns 0 (constant) when no
// sample qualifies; *n_retain receives the qualifying count.
template <typename T>
BasicTensor<T> retain_ce(const BasicTensor<T>& logits, std::span<const std::size_t> labels,
                         const MultiHotClassSet& A, std::size_t* n_retain = nullptr);

// Squared distance of every forget-position logit from 1 / |U|, averaged
// over batch x forget positions. Retain positions are excluded. 0 if U is empty.
template <typename T>
BasicTensor<T> forget_mse(const BasicTensor<T>& logits, const MultiHotClassSet& U);

// 1 / (eps + mean CE over samples whose label is in U); 0 when none qualify.
template <typename T>
BasicTensor<T> inverse_ce(const BasicTensor<T>& logits, std::span<const std::size_t> labels,
                          const MultiHotClassSet& U, T eps = static_cast<T>(kInverseCeEps),
                          std::size_t* n_forget = nullptr);

template <typename T>
BasicTensor<T> joint_loss(const BasicTensor<T>& l_ce, const BasicTensor<T>& l_u, const BasicTensor<T>& l_i,
                          const LossWeights& weights);

template <typename T>
LossTerms<T> compute_losses(const BasicTensor<T>& logits, std::span<const std::size_t> labels,
                            const MultiHotClassSet& A, const MultiHotClassSet& U, const LossWeights& weights,
                            T eps = static_cast<T>(kInverseCeEps));

}  // namespace novo
