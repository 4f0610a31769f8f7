#include "sfkit/index.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "sfkit/binio.hpp"
#include "sfkit/errors.hpp"
#include "sfkit/rng.hpp"

namespace sfk {

namespace {
constexpr char kMagic[4] = {'S', 'F', 'K', 'I'};
constexpr uint32_t kVersion = 1;
constexpr double kNormTolerance = 1e-6;
}  // namespace

VectorIndex VectorIndex::build(const std::vector<EmbeddingRecord>& records) {
  if (records.empty()) throw DataError("build_index: no records");
  const int dim = int(records.front().vector.size());
  VectorIndex index;
  index.matrix_ = Matd(Eigen::Index(records.size()), dim);
  std::unordered_set<std::string> seen;
  for (size_t i = 0; i < records.size(); ++i) {
    const auto& rec = records[i];
    if (int(rec.vector.size()) != dim)
      throw DataError("build_index: record '" + rec.id + "' has dim " +
                      std::to_string(rec.vector.size()) + ", expected " +
                      std::to_string(dim));
    if (!seen.insert(rec.id).second)
      throw DataError("build_index: duplicate id '" + rec.id + "'");
    index.matrix_.row(Eigen::Index(i)) = rec.vector;
    index.ids_.push_back(rec.id);
    index.labels_.push_back(rec.labels);
  }
  index.validate_norms();
  return index;
}

void VectorIndex::validate_norms(double tolerance) const {
  for (Eigen::Index r = 0; r < matrix_.rows(); ++r) {
    const double norm = matrix_.row(r).norm();
    if (std::abs(norm - 1.0) > tolerance)
      throw DataError("index row for '" + ids_[size_t(r)] +
                      "' is not unit-norm (|v| = " + std::to_string(norm) + ")");
  }
}

EmbeddingRecord VectorIndex::record(int position) const {
  if (position < 0 || position >= size())
    throw DataError("index position out of range");
  return {ids_[size_t(position)], matrix_.row(position),
          labels_[size_t(position)]};
}

SearchResult VectorIndex::search(const Eigen::RowVectorXd& query, int k,
                                 const std::vector<std::string>& exclude_ids) const {
  if (int(query.size()) != dim())
    throw DataError("search: query dim " + std::to_string(query.size()) +
                    " does not match index dim " + std::to_string(dim()));
  std::unordered_set<std::string> excluded(exclude_ids.begin(),
                                           exclude_ids.end());
  int available = size();
  if (!excluded.empty())
    for (const auto& id : ids_)
      if (excluded.count(id)) --available;
  if (k < 1 || k > available)
    throw DataError("search: k=" + std::to_string(k) + " with only " +
                    std::to_string(available) + " searchable records");

  const Eigen::VectorXd scores = matrix_ * query.transpose();

  // Positions sorted by (score desc, insertion position asc); partial sort
  // keeps only what the caller asked for.
  std::vector<int> order;
  order.reserve(size_t(size()));
  for (int i = 0; i < size(); ++i)
    if (excluded.empty() || !excluded.count(ids_[size_t(i)])) order.push_back(i);
  const auto better = [&](int a, int b) {
    if (scores(a) != scores(b)) return scores(a) > scores(b);
    return a < b;
  };
  std::partial_sort(order.begin(), order.begin() + k, order.end(), better);

  SearchResult result;
  result.reserve(size_t(k));
  for (int i = 0; i < k; ++i) {
    const int pos = order[size_t(i)];
    result.push_back({pos, ids_[size_t(pos)], scores(pos), labels_[size_t(pos)]});
  }
  return result;
}

void VectorIndex::save(const std::string& path) const {
  auto os = binio::open_output(path);
  binio::write_magic(os, kMagic);
  binio::write_u32(os, kVersion);
  binio::write_u32(os, uint32_t(size()));
  binio::write_u32(os, uint32_t(dim()));
  for (int i = 0; i < size(); ++i) {
    binio::write_string(os, ids_[size_t(i)]);
    for (int c = 0; c < kNumClasses; ++c)
      binio::write_u8(os, labels_[size_t(i)].test(c) ? 1 : 0);
  }
  for (Eigen::Index r = 0; r < matrix_.rows(); ++r)
    for (Eigen::Index c = 0; c < matrix_.cols(); ++c)
      binio::write_f32(os, float(matrix_(r, c)));
}

VectorIndex VectorIndex::load(const std::string& path) {
  auto is = binio::open_input(path);
  binio::expect_magic(is, kMagic, path);
  const uint32_t version = binio::read_u32(is, "version");
  if (version != kVersion)
    throw DataError("'" + path + "': unsupported index version " +
                    std::to_string(version));
  const uint32_t count = binio::read_u32(is, "count");
  const uint32_t dim = binio::read_u32(is, "dim");
  if (count == 0 || dim == 0)
    throw DataError("'" + path + "': empty index file");

  VectorIndex index;
  std::unordered_set<std::string> seen;
  for (uint32_t i = 0; i < count; ++i) {
    std::string id = binio::read_string(is, "record id");
    if (!seen.insert(id).second)
      throw DataError("'" + path + "': duplicate id '" + id + "'");
    LabelVector labels;
    for (int c = 0; c < kNumClasses; ++c)
      labels.set(c, binio::read_u8(is, "label byte") != 0);
    index.ids_.push_back(std::move(id));
    index.labels_.push_back(labels);
  }
  index.matrix_ = Matd(count, dim);
  for (Eigen::Index r = 0; r < index.matrix_.rows(); ++r)
    for (Eigen::Index c = 0; c < index.matrix_.cols(); ++c) {
      float v;
      binio::read_bytes(is, &v, 4, "matrix values");
      index.matrix_(r, c) = double(v);
    }
  index.validate_norms();
  return index;
}

VectorIndex VectorIndex::with_shuffled_labels(uint64_t seed) const {
  VectorIndex out = *this;
  std::vector<size_t> perm(labels_.size());
  for (size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  Rng rng(seed);
  rng.shuffle(perm);
  for (size_t i = 0; i < perm.size(); ++i) out.labels_[i] = labels_[perm[i]];
  return out;
}

}  // namespace sfk
