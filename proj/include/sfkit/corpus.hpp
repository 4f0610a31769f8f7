#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sfkit/label.hpp"

namespace sfk {

template <class Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Matf = Mat<float>;
using Matd = Mat<double>;

// One clip's acoustic features: rows are frames, columns are feature
// channels. Stored 32-bit like the on-disk format; models widen to double.
using FeatureSequence = Matf;

enum class Split { kTrain, kVal, kTest, kUnassigned };

const char* split_name(Split s);
Split split_from_name(const std::string& name);

struct ClipRecord {
  std::string id;
  std::string speaker;
  LabelVector labels;
  int frames = 0;
  int64_t offset = -1;  // byte offset of the clip's first float in features.bin
  Split split = Split::kUnassigned;
  std::optional<std::string> augmented_from;
};

// Clips plus (optionally) their loaded feature matrices. `features`, when
// non-empty, is parallel to `clips`.
struct Corpus {
  std::vector<ClipRecord> clips;
  int dim = 0;
  std::array<std::string, kNumClasses> class_names = {
      "Prolongation", "Block", "SoundRep", "WordRep", "Interjection"};
  std::vector<FeatureSequence> features;

  size_t size() const { return clips.size(); }
  bool has_features() const { return features.size() == clips.size(); }
  std::vector<size_t> split_indices(Split s) const;
  std::array<int64_t, kNumClasses> class_counts() const;
  const ClipRecord* find(const std::string& id) const;
};

// Pearson correlation between binary label columns. Entries involving a
// constant column are NaN, never silently zero. 5×5, symmetric, unit
// diagonal where defined.
Eigen::Matrix<double, kNumClasses, kNumClasses> label_correlation_matrix(
    const Corpus& corpus);

// Drops clips labeled only as fluent (all-zero label vector). Order of the
// survivors is preserved. Returns the number removed via `removed` if given.
Corpus filter_fluent(const Corpus& corpus, size_t* removed = nullptr);

// Assigns splits speaker-wise: speakers are shuffled by seed, then greedily
// placed (largest clip count first) into the most-underfilled split, so no
// speaker ever straddles two splits. Ratios must be positive and sum to 1.
Corpus speaker_independent_split(const Corpus& corpus,
                                 const std::array<double, 3>& ratios,
                                 uint64_t seed);

}  // namespace sfk
