#include "sfkit/augment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "sfkit/errors.hpp"
#include "sfkit/rng.hpp"

namespace sfk {

int64_t AugmentationPlan::total_copies() const {
  int64_t n = 0;
  for (const auto& [id, k] : copies) n += k;
  return n;
}

std::array<int64_t, kNumClasses> AugmentationPlan::final_counts(
    const Corpus& corpus) const {
  auto counts = corpus.class_counts();
  for (const auto& clip : corpus.clips) {
    const auto it = copies.find(clip.id);
    if (it == copies.end()) continue;
    for (int c = 0; c < kNumClasses; ++c)
      if (clip.labels.test(c)) counts[size_t(c)] += it->second;
  }
  return counts;
}

RarityProfile compute_rarity(const Corpus& corpus) {
  RarityProfile profile;
  profile.class_counts = corpus.class_counts();
  for (int c = 0; c < kNumClasses; ++c)
    if (profile.class_counts[size_t(c)] > 0)
      profile.class_rarity[size_t(c)] =
          1.0 / double(profile.class_counts[size_t(c)]);

  for (const auto& clip : corpus.clips) {
    if (clip.labels.empty())
      throw DataError("compute_rarity: clip '" + clip.id +
                      "' has no labels; filter the corpus first");
    double r_x = std::numeric_limits<double>::infinity();
    bool any = false;
    for (int c = 0; c < kNumClasses; ++c) {
      if (!clip.labels.test(c)) continue;
      if (!profile.class_rarity[size_t(c)])
        throw DataError("compute_rarity: clip '" + clip.id +
                        "' references class '" + kClassNames[size_t(c)] +
                        "' with zero count");
      r_x = std::min(r_x, *profile.class_rarity[size_t(c)]);
      any = true;
    }
    (void)any;
    profile.instance_rarity[clip.id] = r_x;
    profile.max_instance_rarity = std::max(profile.max_instance_rarity, r_x);
  }
  return profile;
}

int per_instance_cap(double r_x, double r_max, int k_max) {
  return int(std::ceil(double(k_max) * r_x / r_max - 1e-12));
}

double augmentation_objective(const std::array<int64_t, kNumClasses>& counts,
                              const std::array<int64_t, kNumClasses>& targets,
                              const std::array<double, kNumClasses>& weights) {
  double obj = 0.0;
  for (int c = 0; c < kNumClasses; ++c) {
    const double d = double(counts[size_t(c)] - targets[size_t(c)]);
    obj += weights[size_t(c)] * d * d;
  }
  return obj;
}

AugmentationPlan plan_augmentation(
    const Corpus& corpus, const std::array<int64_t, kNumClasses>& targets,
    const std::array<double, kNumClasses>& weights, int k_max, int64_t budget) {
  if (corpus.clips.empty()) throw DataError("plan_augmentation: empty corpus");
  if (k_max < 1) throw ConfigError("plan_augmentation: K_max must be >= 1");
  if (budget < 0) throw ConfigError("plan_augmentation: budget must be >= 0");

  const RarityProfile profile = compute_rarity(corpus);

  AugmentationPlan plan;
  plan.targets = targets;
  plan.weights = weights;
  plan.budget = budget;

  // Candidates grouped by label mask: every clip in a group changes the
  // objective identically, so per step only the group's smallest-id clip
  // with cap room matters.
  struct Group {
    LabelVector labels;
    std::vector<std::pair<std::string, int>> clips;  // (id, remaining cap), id-sorted
    size_t next = 0;                                 // first clip with cap left
  };
  std::map<unsigned, Group> groups;
  for (const auto& clip : corpus.clips) {
    const int cap = per_instance_cap(profile.instance_rarity.at(clip.id),
                                     profile.max_instance_rarity, k_max);
    plan.per_instance_cap[clip.id] = cap;
    if (cap <= 0) continue;
    auto& g = groups[clip.labels.mask()];
    g.labels = clip.labels;
    g.clips.emplace_back(clip.id, cap);
  }
  for (auto& [mask, g] : groups)
    std::sort(g.clips.begin(), g.clips.end());

  auto counts = corpus.class_counts();
  double objective = augmentation_objective(counts, targets, weights);
  plan.objective_trace.push_back(objective);

  int64_t used = 0;
  while (used < budget) {
    // Δ objective of adding one clip with labels L:
    //   Σ_{c∈L} w_c (2(F_c − T_c) + 1)
    double best_delta = 0.0;
    Group* best_group = nullptr;
    const std::string* best_id = nullptr;
    for (auto& [mask, g] : groups) {
      while (g.next < g.clips.size() && g.clips[g.next].second == 0) ++g.next;
      if (g.next >= g.clips.size()) continue;
      double delta = 0.0;
      for (int c = 0; c < kNumClasses; ++c)
        if (g.labels.test(c))
          delta += weights[size_t(c)] *
                   (2.0 * double(counts[size_t(c)] - targets[size_t(c)]) + 1.0);
      const std::string& id = g.clips[g.next].first;
      const bool better =
          delta < best_delta - 1e-12 ||
          (best_id && std::abs(delta - best_delta) <= 1e-12 && id < *best_id);
      if (better && delta < -1e-12) {
        best_delta = delta;
        best_group = &g;
        best_id = &id;
      }
    }
    if (!best_group) break;  // no copy strictly decreases the objective

    plan.copies[*best_id] += 1;
    best_group->clips[best_group->next].second -= 1;
    for (int c = 0; c < kNumClasses; ++c)
      if (best_group->labels.test(c)) ++counts[size_t(c)];
    objective += best_delta;
    plan.objective_trace.push_back(objective);
    ++used;
  }

  // Recompute from scratch; the incremental value must agree exactly up to
  // floating-point association, so store the recomputed one.
  plan.objective_value = augmentation_objective(counts, targets, weights);
  return plan;
}

namespace {

// Linear interpolation of the frame axis to `stretched` frames, then
// center-pad with zeros or center-truncate back to `frames`.
FeatureSequence stretch_frames(const FeatureSequence& parent, double factor) {
  const int frames = int(parent.rows());
  const int dim = int(parent.cols());
  const int stretched = std::max(1, int(std::lround(double(frames) * factor)));

  FeatureSequence resampled(stretched, dim);
  if (stretched == 1 || frames == 1) {
    for (int t = 0; t < stretched; ++t)
      resampled.row(t) = parent.row(std::min(frames - 1, t));
  } else {
    const double scale = double(frames - 1) / double(stretched - 1);
    for (int t = 0; t < stretched; ++t) {
      const double src = double(t) * scale;
      const int lo = std::min(frames - 2, int(std::floor(src)));
      const float w = float(src - lo);
      resampled.row(t) = (1.0f - w) * parent.row(lo) + w * parent.row(lo + 1);
    }
  }

  if (stretched == frames) return resampled;
  FeatureSequence out = FeatureSequence::Zero(frames, dim);
  if (stretched > frames) {
    const int start = (stretched - frames) / 2;
    out = resampled.middleRows(start, frames);
  } else {
    const int start = (frames - stretched) / 2;
    out.middleRows(start, stretched) = resampled;
  }
  return out;
}

}  // namespace

Corpus apply_augmentation(const Corpus& corpus, const AugmentationPlan& plan,
                          double noise_sigma,
                          std::pair<double, double> stretch_range,
                          uint64_t seed) {
  if (stretch_range.first <= 0.0 || stretch_range.second <= 0.0)
    throw ConfigError("apply_augmentation: stretch factors must be > 0");
  if (stretch_range.second < stretch_range.first)
    throw ConfigError("apply_augmentation: stretch range is inverted");
  if (!corpus.has_features())
    throw DataError("apply_augmentation: corpus features not loaded");

  Corpus out = corpus;
  for (size_t i = 0; i < corpus.clips.size(); ++i) {
    const ClipRecord& parent = corpus.clips[i];
    const auto it = plan.copies.find(parent.id);
    if (it == plan.copies.end()) continue;
    if (it->second < 0)
      throw DataError("plan has negative copy count for '" + parent.id + "'");
    for (int k = 0; k < it->second; ++k) {
      // Per-copy substream: independent of plan iteration order.
      Rng rng = Rng::substream(seed, parent.id, uint64_t(k));

      FeatureSequence f = corpus.features[i];
      if (noise_sigma > 0.0)
        for (int r = 0; r < f.rows(); ++r)
          for (int c = 0; c < f.cols(); ++c)
            f(r, c) += float(rng.normal(0.0, noise_sigma));
      const double factor = rng.uniform(stretch_range.first, stretch_range.second);
      f = stretch_frames(f, factor);

      ClipRecord copy = parent;
      copy.id = parent.id + "#aug" + std::to_string(k);
      copy.augmented_from = parent.id;
      copy.offset = -1;  // assigned on save
      copy.frames = int(f.rows());
      out.clips.push_back(std::move(copy));
      out.features.push_back(std::move(f));
    }
  }
  return out;
}

std::string plan_to_json(const AugmentationPlan& plan) {
  nlohmann::json j;
  j["targets"] = plan.targets;
  j["weights"] = plan.weights;
  j["budget"] = plan.budget;
  j["copies"] = plan.copies;
  j["objective"] = plan.objective_value;
  return j.dump(2);
}

AugmentationPlan plan_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("invalid plan JSON: ") + e.what());
  }
  AugmentationPlan plan;
  for (int c = 0; c < kNumClasses; ++c) {
    plan.targets[size_t(c)] = j.at("targets").at(size_t(c)).get<int64_t>();
    plan.weights[size_t(c)] = j.at("weights").at(size_t(c)).get<double>();
  }
  plan.budget = j.at("budget").get<int64_t>();
  for (const auto& [id, k] : j.at("copies").items())
    plan.copies[id] = k.get<int>();
  plan.objective_value = j.at("objective").get<double>();
  return plan;
}

}  // namespace sfk
