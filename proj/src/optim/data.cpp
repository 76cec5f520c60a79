#include "difflab/optim/data.hpp"

#include <algorithm>
#include <numeric>

#include "difflab/errors.hpp"
#include "difflab/kernels.hpp"

namespace difflab::optim {

void check_dataset(const Dataset& data) {
  if (data.inputs.rank() == 0 || data.targets.rank() == 0)
    throw DimensionError("dataset inputs and targets need a leading example axis");
  if (data.inputs.dim(0) != data.targets.dim(0))
    throw DimensionError("dataset has " + std::to_string(data.inputs.dim(0)) + " inputs but " +
                         std::to_string(data.targets.dim(0)) + " targets");
}

Tensor take_rows(const Tensor& x, const std::vector<Index>& rows) {
  if (x.rank() == 0) throw DimensionError("take_rows needs a leading axis");
  const Index n = x.dim(0);
  const Index stride = n == 0 ? 0 : x.size() / n;
  Shape shape = x.shape();
  shape[0] = static_cast<Index>(rows.size());
  Tensor out(shape);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const Index i = rows[r];
    if (i < 0 || i >= n) throw DimensionError("row " + std::to_string(i) + " outside [0, " + std::to_string(n) + ")");
    std::copy_n(x.data() + i * stride, stride, out.data() + static_cast<Index>(r) * stride);
  }
  return out;
}

MinibatchIterator::MinibatchIterator(const Dataset& data, Index batch_size, std::uint64_t seed)
    : data_(&data), batch_size_(batch_size), rng_(seed) {
  check_dataset(data);
  if (batch_size <= 0) throw ContractError("mini-batch size must be positive");
  if (batch_size > data.size())
    throw ContractError("mini-batch size " + std::to_string(batch_size) + " exceeds dataset size " +
                        std::to_string(data.size()));
  order_.resize(static_cast<std::size_t>(data.size()));
  reshuffle();
}

Index MinibatchIterator::batches_per_epoch() const { return (data_->size() + batch_size_ - 1) / batch_size_; }

void MinibatchIterator::reshuffle() {
  std::iota(order_.begin(), order_.end(), Index{0});
  std::shuffle(order_.begin(), order_.end(), rng_.engine());
  cursor_ = 0;
}

Batch MinibatchIterator::next() {
  if (cursor_ >= data_->size()) {
    reshuffle();
    ++epoch_;
  }
  const Index stop = std::min(cursor_ + batch_size_, data_->size());
  Batch b;
  b.indices.assign(order_.begin() + cursor_, order_.begin() + stop);
  cursor_ = stop;
  b.inputs = take_rows(data_->inputs, b.indices);
  b.targets = take_rows(data_->targets, b.indices);
  return b;
}

std::vector<std::vector<Index>> MinibatchIterator::epoch_indices() {
  std::vector<std::vector<Index>> out;
  const Index start_epoch = cursor_ >= data_->size() ? epoch_ + 1 : epoch_;
  for (Index k = 0; k < batches_per_epoch(); ++k) {
    Batch b = next();
    if (epoch_ != start_epoch) throw ContractError("epoch_indices must start at an epoch boundary");
    out.push_back(std::move(b.indices));
  }
  return out;
}

Tensor gaussian_noise(const Tensor& x, double stddev, Rng& rng) {
  if (stddev < 0.0) throw DomainError("noise standard deviation must be non-negative");
  Tensor out = x;
  for (Index i = 0; i < out.size(); ++i) out[i] += rng.normal(0.0, stddev);
  return out;
}

Mixed mixup(const Tensor& x1, const Tensor& y1, const Tensor& x2, const Tensor& y2, double lambda) {
  if (x1.shape() != x2.shape() || y1.shape() != y2.shape())
    throw DimensionError("mixup needs equally shaped pairs");
  if (lambda < 0.0 || lambda > 1.0) throw DomainError("mixup lambda must lie in [0, 1]");
  Mixed m;
  m.lambda = lambda;
  m.inputs = Tensor(x1.shape(), Tensor::Storage(lambda * x1.array() + (1.0 - lambda) * x2.array()));
  m.targets = Tensor(y1.shape(), Tensor::Storage(lambda * y1.array() + (1.0 - lambda) * y2.array()));
  return m;
}

namespace {

std::vector<Index> partners(Index n, Rng& rng) {
  std::vector<Index> p(static_cast<std::size_t>(n));
  std::iota(p.begin(), p.end(), Index{0});
  std::shuffle(p.begin(), p.end(), rng.engine());
  return p;
}

}  // namespace

Mixed mixup_batch(const Tensor& x, const Tensor& y, Rng& rng) {
  check_dataset({x, y});
  const double lambda = rng.uniform();
  const auto p = partners(x.dim(0), rng);
  return mixup(x, y, take_rows(x, p), take_rows(y, p), lambda);
}

Tensor patch_mask(Index h, Index w, Index top, Index left, Index patch_h, Index patch_w) {
  if (patch_h < 0 || patch_w < 0 || top < 0 || left < 0 || top + patch_h > h || left + patch_w > w)
    throw DimensionError("patch does not fit inside the image");
  Tensor m({h, w});
  for (Index i = top; i < top + patch_h; ++i)
    for (Index j = left; j < left + patch_w; ++j) m(i, j) = 1.0;
  return m;
}

Mixed cutmix(const Tensor& x1, const Tensor& y1, const Tensor& x2, const Tensor& y2, const Tensor& mask,
             double lambda) {
  if (x1.shape() != x2.shape() || y1.shape() != y2.shape())
    throw DimensionError("cutmix needs equally shaped pairs");
  if (x1.rank() < 3 || mask.rank() != 2)
    throw DimensionError("cutmix expects (..., h, w, c) images and an (h, w) mask");
  const Index r = x1.rank();
  if (mask.dim(0) != x1.dim(r - 3) || mask.dim(1) != x1.dim(r - 2))
    throw DimensionError("mask " + to_string(mask.shape()) + " does not match images " + to_string(x1.shape()));
  if (lambda < 0.0 || lambda > 1.0) throw DomainError("cutmix lambda must lie in [0, 1]");
  Shape mshape(static_cast<std::size_t>(r), 1);
  mshape[static_cast<std::size_t>(r - 3)] = mask.dim(0);
  mshape[static_cast<std::size_t>(r - 2)] = mask.dim(1);
  const Tensor m = broadcast_to(mask.reshaped(mshape), x1.shape());
  Mixed out;
  out.lambda = lambda;
  out.mask = mask;
  out.inputs = Tensor(x1.shape(), Tensor::Storage(m.array() * x1.array() + (1.0 - m.array()) * x2.array()));
  out.targets = Tensor(y1.shape(), Tensor::Storage(lambda * y1.array() + (1.0 - lambda) * y2.array()));
  return out;
}

Mixed cutmix_batch(const Tensor& x, const Tensor& y, Index patch_h, Index patch_w, Rng& rng) {
  check_dataset({x, y});
  if (x.rank() != 4) throw DimensionError("cutmix_batch expects (n, h, w, c) images");
  const Index h = x.dim(1), w = x.dim(2);
  if (patch_h > h || patch_w > w) throw DimensionError("patch larger than the image");
  const auto top = static_cast<Index>(rng.below(static_cast<std::uint64_t>(h - patch_h + 1)));
  const auto left = static_cast<Index>(rng.below(static_cast<std::uint64_t>(w - patch_w + 1)));
  const double lambda = rng.uniform();
  const auto p = partners(x.dim(0), rng);
  return cutmix(x, y, take_rows(x, p), take_rows(y, p), patch_mask(h, w, top, left, patch_h, patch_w), lambda);
}

}  // namespace difflab::optim
