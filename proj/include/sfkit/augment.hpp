#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include "sfkit/corpus.hpp"

namespace sfk {

// Rarity of a class is the reciprocal of its count; rarity of a clip is the
// minimum class rarity among its labels (a clip is only as rare as its most
// common label, which caps duplication of common co-labels).
struct RarityProfile {
  std::array<int64_t, kNumClasses> class_counts{};
  std::array<std::optional<double>, kNumClasses> class_rarity{};  // 1/f_c
  std::map<std::string, double> instance_rarity;                  // clip id → r_x
  double max_instance_rarity = 0.0;
};

struct AugmentationPlan {
  std::map<std::string, int> copies;  // clip id → copy count (> 0 entries only)
  std::array<int64_t, kNumClasses> targets{};
  std::array<double, kNumClasses> weights{};
  std::map<std::string, int> per_instance_cap;
  int64_t budget = 0;
  double objective_value = 0.0;
  std::vector<double> objective_trace;  // objective after each greedy pick

  int64_t total_copies() const;
  std::array<int64_t, kNumClasses> final_counts(const Corpus& corpus) const;
};

RarityProfile compute_rarity(const Corpus& corpus);

// ceil(K_max * r_x / r_max): the rarest instance gets K_max copies, caps
// shrink proportionally for more common instances.
int per_instance_cap(double r_x, double r_max, int k_max);

// Greedy descent on Σ_c w_c (F̂_c − T_c)²: each step adds the single copy
// with the greatest strict decrease; ties go to the smallest clip id. Stops
// when no copy strictly decreases the objective, caps saturate, or the
// budget runs out.
AugmentationPlan plan_augmentation(const Corpus& corpus,
                                   const std::array<int64_t, kNumClasses>& targets,
                                   const std::array<double, kNumClasses>& weights,
                                   int k_max, int64_t budget);

// Materializes the plan: each copy is the parent's features plus seeded
// Gaussian noise and a frame-axis time stretch, re-padded/truncated to the
// parent's frame count. Copies keep the parent's labels and speaker.
Corpus apply_augmentation(const Corpus& corpus, const AugmentationPlan& plan,
                          double noise_sigma,
                          std::pair<double, double> stretch_range,
                          uint64_t seed);

// Weighted squared error of counts against targets.
double augmentation_objective(const std::array<int64_t, kNumClasses>& counts,
                              const std::array<int64_t, kNumClasses>& targets,
                              const std::array<double, kNumClasses>& weights);

std::string plan_to_json(const AugmentationPlan& plan);
AugmentationPlan plan_from_json(const std::string& text);

}  // namespace sfk
