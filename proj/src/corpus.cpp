#include "sfkit/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "sfkit/errors.hpp"
#include "sfkit/rng.hpp"

namespace sfk {

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
    case Split::kUnassigned: return "unassigned";
  }
  return "unassigned";
}

Split split_from_name(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  if (name == "unassigned") return Split::kUnassigned;
  throw DataError("unknown split name: '" + name + "'");
}

std::vector<size_t> Corpus::split_indices(Split s) const {
  std::vector<size_t> out;
  for (size_t i = 0; i < clips.size(); ++i)
    if (clips[i].split == s) out.push_back(i);
  return out;
}

std::array<int64_t, kNumClasses> Corpus::class_counts() const {
  std::array<int64_t, kNumClasses> counts{};
  for (const auto& clip : clips)
    for (int c = 0; c < kNumClasses; ++c)
      if (clip.labels.test(c)) ++counts[size_t(c)];
  return counts;
}

const ClipRecord* Corpus::find(const std::string& id) const {
  for (const auto& clip : clips)
    if (clip.id == id) return &clip;
  return nullptr;
}

Eigen::Matrix<double, kNumClasses, kNumClasses> label_correlation_matrix(
    const Corpus& corpus) {
  if (corpus.clips.empty())
    throw DataError("label_correlation_matrix: empty corpus");
  const double n = double(corpus.clips.size());

  Eigen::Matrix<double, kNumClasses, Eigen::Dynamic> cols(kNumClasses,
                                                          corpus.clips.size());
  for (size_t i = 0; i < corpus.clips.size(); ++i)
    for (int c = 0; c < kNumClasses; ++c)
      cols(c, Eigen::Index(i)) = corpus.clips[i].labels.test(c) ? 1.0 : 0.0;

  const Eigen::Matrix<double, kNumClasses, 1> mean = cols.rowwise().mean();
  Eigen::Matrix<double, kNumClasses, Eigen::Dynamic> centered =
      cols.colwise() - mean;
  const Eigen::Matrix<double, kNumClasses, 1> var =
      centered.rowwise().squaredNorm() / n;

  const double nan = std::numeric_limits<double>::quiet_NaN();
  Eigen::Matrix<double, kNumClasses, kNumClasses> r;
  for (int a = 0; a < kNumClasses; ++a) {
    for (int b = 0; b < kNumClasses; ++b) {
      if (var(a) <= 0.0 || var(b) <= 0.0) {
        r(a, b) = nan;  // constant column: correlation undefined
        continue;
      }
      const double cov = centered.row(a).dot(centered.row(b)) / n;
      r(a, b) = cov / std::sqrt(var(a) * var(b));
    }
  }
  return r;
}

Corpus filter_fluent(const Corpus& corpus, size_t* removed) {
  Corpus out;
  out.dim = corpus.dim;
  out.class_names = corpus.class_names;
  const bool with_features = corpus.has_features();
  size_t dropped = 0;
  for (size_t i = 0; i < corpus.clips.size(); ++i) {
    if (corpus.clips[i].labels.empty()) {
      ++dropped;
      continue;
    }
    out.clips.push_back(corpus.clips[i]);
    if (with_features) out.features.push_back(corpus.features[i]);
  }
  if (removed) *removed = dropped;
  return out;
}

Corpus speaker_independent_split(const Corpus& corpus,
                                 const std::array<double, 3>& ratios,
                                 uint64_t seed) {
  double sum = 0.0;
  for (const double r : ratios) {
    if (r <= 0.0) throw ConfigError("split ratios must be positive");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw ConfigError("split ratios must sum to 1");

  // Clip counts per speaker, in first-appearance order so the shuffle is
  // the only source of permutation.
  std::vector<std::string> speakers;
  std::map<std::string, int64_t> clip_count;
  for (const auto& clip : corpus.clips) {
    auto [it, inserted] = clip_count.try_emplace(clip.speaker, 0);
    if (inserted) speakers.push_back(clip.speaker);
    ++it->second;
  }
  if (speakers.size() < 3)
    throw DataError("speaker_independent_split: need at least 3 distinct "
                    "speakers, got " + std::to_string(speakers.size()));

  Rng rng(seed);
  rng.shuffle(speakers);
  // Largest speaker first; the shuffle order breaks count ties.
  std::stable_sort(speakers.begin(), speakers.end(),
                   [&](const std::string& a, const std::string& b) {
                     return clip_count[a] > clip_count[b];
                   });

  const double total = double(corpus.clips.size());
  std::array<double, 3> target{};
  std::array<double, 3> assigned{};
  for (int s = 0; s < 3; ++s) target[size_t(s)] = ratios[size_t(s)] * total;

  std::map<std::string, Split> assignment;
  const std::array<Split, 3> split_of = {Split::kTrain, Split::kVal,
                                         Split::kTest};
  for (const auto& spk : speakers) {
    int best = 0;
    double best_deficit = -std::numeric_limits<double>::infinity();
    for (int s = 0; s < 3; ++s) {
      const double deficit = target[size_t(s)] - assigned[size_t(s)];
      if (deficit > best_deficit + 1e-12) {
        best_deficit = deficit;
        best = s;
      }
    }
    assignment[spk] = split_of[size_t(best)];
    assigned[size_t(best)] += double(clip_count[spk]);
  }

  Corpus out = corpus;
  for (auto& clip : out.clips) clip.split = assignment.at(clip.speaker);
  return out;
}

}  // namespace sfk
