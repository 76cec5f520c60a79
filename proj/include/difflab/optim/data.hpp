#pragma once

#include <vector>

#include "difflab/random.hpp"
#include "difflab/tensor.hpp"

namespace difflab::optim {

/// n (input, target) pairs, stacked along the leading axis.
struct Dataset {
  Tensor inputs;
  Tensor targets;
  Index size() const { return inputs.rank() == 0 ? 0 : inputs.dim(0); }
};
void check_dataset(const Dataset& data);

struct Batch {
  Tensor inputs;
  Tensor targets;
  std::vector<Index> indices;
};

/// Shuffles once per epoch and walks the permutation r elements at a time;
/// the last batch of an epoch may be shorter.
class MinibatchIterator {
 public:
  MinibatchIterator(const Dataset& data, Index batch_size, std::uint64_t seed);
  Index batches_per_epoch() const;
  /// Next batch, reshuffling when an epoch is exhausted.
  Batch next();
  Index epoch() const { return epoch_; }
  /// Index lists of one full epoch, consuming it.
  std::vector<std::vector<Index>> epoch_indices();

 private:
  void reshuffle();

  const Dataset* data_;
  Index batch_size_;
  Rng rng_;
  std::vector<Index> order_;
  Index cursor_ = 0;
  Index epoch_ = 0;
};

/// Rows of x (leading axis) at the given indices.
Tensor take_rows(const Tensor& x, const std::vector<Index>& rows);

// ---------------------------------------------------------------------------
// Augmentation

Tensor gaussian_noise(const Tensor& x, double stddev, Rng& rng);

struct Mixed {
  Tensor inputs;
  Tensor targets;
  double lambda = 1.0;
  Tensor mask;  // cutmix only: 1 where the first image shows through
};

/// lambda x1 + (1 - lambda) x2 and likewise for the targets.
Mixed mixup(const Tensor& x1, const Tensor& y1, const Tensor& x2, const Tensor& y2, double lambda);
/// Pairs each example with a random partner from the same batch, lambda ~ U[0, 1].
Mixed mixup_batch(const Tensor& x, const Tensor& y, Rng& rng);

/// (h, w) binary mask with a patch of ones at (top, left).
Tensor patch_mask(Index h, Index w, Index top, Index left, Index patch_h, Index patch_w);
/// M x1 + (1 - M) x2 for images (h, w, c) with M broadcast over channels;
/// targets lambda y1 + (1 - lambda) y2.
Mixed cutmix(const Tensor& x1, const Tensor& y1, const Tensor& x2, const Tensor& y2, const Tensor& mask, double lambda);
/// Random patch position and lambda ~ U[0, 1], applied to (n, h, w, c) batches
/// with a random partner for every example.
Mixed cutmix_batch(const Tensor& x, const Tensor& y, Index patch_h, Index patch_w, Rng& rng);

}  // namespace difflab::optim
