#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sfkit/corpus.hpp"
#include "sfkit/label.hpp"

namespace sfk {

// One unit-norm embedding with its clip id and labels; the unit stored in
// the retrieval index.
struct EmbeddingRecord {
  std::string id;
  Eigen::RowVectorXd vector;
  LabelVector labels;
};

struct SearchHit {
  int position = -1;  // insertion position in the index
  std::string id;
  double score = 0.0;  // inner product, in [-1, 1] for unit vectors
  LabelVector labels;
};

using SearchResult = std::vector<SearchHit>;

// Exact flat maximum-inner-product index over unit-norm rows. Immutable
// after build; concurrent searches are safe.
class VectorIndex {
 public:
  static VectorIndex build(const std::vector<EmbeddingRecord>& records);

  int dim() const { return int(matrix_.cols()); }
  int size() const { return int(matrix_.rows()); }
  const std::vector<std::string>& ids() const { return ids_; }
  const std::vector<LabelVector>& labels() const { return labels_; }
  const Matd& matrix() const { return matrix_; }
  EmbeddingRecord record(int position) const;

  // Exact top-k by inner product over all rows; ties broken by earlier
  // insertion position. exclude ids are removed before ranking.
  SearchResult search(const Eigen::RowVectorXd& query, int k,
                      const std::vector<std::string>& exclude_ids = {}) const;

  // Index file "SFKI": magic, version u32=1, count u32, dim u32; per record
  // id (u16 len + UTF-8) and 5 label bytes; then count×dim f32 row-major.
  void save(const std::string& path) const;
  static VectorIndex load(const std::string& path);

  // Returns a copy whose labels are shuffled among records by seed; the
  // vectors stay in place. Retrieval geometry is untouched but every label
  // a neighbor reports becomes unrelated to its vector.
  VectorIndex with_shuffled_labels(uint64_t seed) const;

 private:
  VectorIndex() = default;
  void validate_norms(double tolerance = 1e-6) const;

  std::vector<std::string> ids_;
  std::vector<LabelVector> labels_;
  Matd matrix_;
};

}  // namespace sfk
