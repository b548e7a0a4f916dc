#include "novo/objectives.hpp"

#include "novo/errors.hpp"

namespace novo {

void LossWeights::validate() const {
  if (beta < 0 || gamma < 0 || tau < 0) {
    throw ConfigError("loss weights must be non-negative (beta=" + std::to_string(beta) +
                      ", gamma=" + std::to_string(gamma) + ", tau=" + std::to_string(tau) + ")");
  }
}

int indicator(double v) { return v > 0 ? 1 : 0; }

namespace {

template <typename T>
void check_batch(const BasicTensor<T>& logits, std::span<const std::size_t> labels, const MultiHotClassSet& set) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size() || logits.dim(0) == 0) {
    throw DimensionError("loss: logits " + shape_str(logits.shape()) + " vs " + std::to_string(labels.size()) +
                         " labels");
  }
  if (set.size() != logits.dim(1)) {
    throw DimensionError("loss: class set of length " + std::to_string(set.size()) + " vs " +
                         std::to_string(logits.dim(1)) + " logits");
  }
}

// Mean CE over samples whose label bit is set in `set`.
template <typename T>
BasicTensor<T> masked_mean_ce(const BasicTensor<T>& logits, std::span<const std::size_t> labels,
                              const MultiHotClassSet& set, std::size_t& count) {
  std::vector<T> mask(labels.size());
  count = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= set.size()) throw IndexError("label " + std::to_string(labels[i]) + " out of range");
    // y_i . set for a one-hot y_i is the label's bit.
    const int hit = indicator(set.bits()[labels[i]]);
    mask[i] = static_cast<T>(hit);
    count += static_cast<std::size_t>(hit);
  }
  if (count == 0) return BasicTensor<T>::scalar(T(0));
  const auto ce = cross_entropy(logits, labels);
  const auto m = BasicTensor<T>({labels.size()}, std::move(mask));
  return scale(sum(mul(ce, m)), T(1) / static_cast<T>(count));
}

}  // namespace

template <typename T>
BasicTensor<T> retain_ce(const BasicTensor<T>& logits, std::span<const std::size_t> labels,
                         const MultiHotClassSet& A, std::size_t* n_retain) {
  check_batch(logits, labels, A);
  std::size_t count = 0;
  auto loss = masked_mean_ce(logits, labels, A, count);
  if (n_retain) *n_retain = count;
  return loss;
}

template <typename T>
BasicTensor<T> forget_mse(const BasicTensor<T>& logits, const MultiHotClassSet& U) {
  if (logits.rank() != 2 || logits.dim(1) != U.size()) {
    throw DimensionError("forget_mse: logits " + shape_str(logits.shape()) + " vs U of length " +
                         std::to_string(U.size()));
  }
  const std::size_t k = U.count();
  if (k == 0) return BasicTensor<T>::scalar(T(0));
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  const T target = T(1) / static_cast<T>(k);
  std::vector<T> mask(b * c), tgt(b * c);
  for (std::size_t i = 0; i < b * c; ++i) {
    mask[i] = static_cast<T>(U.bits()[i % c]);
    tgt[i] = target * mask[i];
  }
  // p_hat = p * U; only forget positions enter the average.
  const auto masked = mul(logits, BasicTensor<T>(logits.shape(), std::move(mask)));
  const auto diff = sub(masked, BasicTensor<T>(logits.shape(), std::move(tgt)));
  return scale(sum(mul(diff, diff)), T(1) / static_cast<T>(b * k));
}

template <typename T>
BasicTensor<T> inverse_ce(const BasicTensor<T>& logits, std::span<const std::size_t> labels,
                          const MultiHotClassSet& U, T eps, std::size_t* n_forget) {
  check_batch(logits, labels, U);
  std::size_t count = 0;
  auto mean_ce = masked_mean_ce(logits, labels, U, count);
  if (n_forget) *n_forget = count;
  if (count == 0) return BasicTensor<T>::scalar(T(0));
  return reciprocal(add_scalar(mean_ce, eps));
}

template <typename T>
BasicTensor<T> joint_loss(const BasicTensor<T>& l_ce, const BasicTensor<T>& l_u, const BasicTensor<T>& l_i,
                          const LossWeights& weights) {
  weights.validate();
  return add(add(scale(l_ce, static_cast<T>(weights.beta)), scale(l_u, static_cast<T>(weights.gamma))),
             scale(l_i, static_cast<T>(weights.tau)));
}

template <typename T>
LossTerms<T> compute_losses(const BasicTensor<T>& logits, std::span<const std::size_t> labels,
                            const MultiHotClassSet& A, const MultiHotClassSet& U, const LossWeights& weights,
                            T eps) {
  LossTerms<T> terms;
  terms.l_ce = retain_ce(logits, labels, A, &terms.n_retain);
  terms.l_u = forget_mse(logits, U);
  terms.l_i = inverse_ce(logits, labels, U, eps, &terms.n_forget);
  terms.total = joint_loss(terms.l_ce, terms.l_u, terms.l_i, weights);
  return terms;
}

#define NOVO_INSTANTIATE(T)                                                                                  \
  template BasicTensor<T> retain_ce(const BasicTensor<T>&, std::span<const std::size_t>,                     \
                                    const MultiHotClassSet&, std::size_t*);                                  \
  template BasicTensor<T> forget_mse(const BasicTensor<T>&, const MultiHotClassSet&);                        \
  template BasicTensor<T> inverse_ce(const BasicTensor<T>&, std::span<const std::size_t>,                    \
                                     const MultiHotClassSet&, T, std::size_t*);                              \
  template BasicTensor<T> joint_loss(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,    \
                                     const LossWeights&);                                                    \
  template LossTerms<T> compute_losses(const BasicTensor<T>&, std::span<const std::size_t>,                  \
                                       const MultiHotClassSet&, const MultiHotClassSet&, const LossWeights&, \
                                       T);

NOVO_INSTANTIATE(float)
NOVO_INSTANTIATE(double)

#undef NOVO_INSTANTIATE

}  // namespace novo
