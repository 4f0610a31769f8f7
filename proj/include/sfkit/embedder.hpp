#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sfkit/corpus.hpp"
#include "sfkit/grad.hpp"
#include "sfkit/index.hpp"

namespace sfk {

// BiGRU-attention embedder: BiGRU over frames, ReLU projection, learned
// attention pooling (dense → tanh → softmax over frames), L2 normalization
// onto the unit hypersphere.
struct EmbedderConfig {
  int input_dim = 1024;   // D
  int gru_hidden = 256;   // H per direction
  int projection_dim = 1024;  // P
  double temperature = 0.1;   // τ for the contrastive loss

  static EmbedderConfig paper_preset() { return {1024, 256, 1024, 0.1}; }
  static EmbedderConfig desk_preset() { return {32, 16, 64, 0.1}; }
};

// Builds (or zero-fills, when rng is null) all embedder parameters under
// `prefix`.
void build_embedder_params(grad::ParameterStore& store, const std::string& prefix,
                           const EmbedderConfig& config, Rng* rng);

// Taped forward pass; usable inside a larger graph (training) or standalone.
struct EmbedderOutput {
  grad::Value embedding;  // 1×P unit row
  grad::Value attention;  // T×1, sums to 1
};
EmbedderOutput embed_value(grad::Graph& g, grad::ParameterStore& store,
                           const std::string& prefix, const EmbedderConfig& config,
                           const FeatureSequence& features);

// Convenience eval-mode forward returning plain vectors.
struct Embedding {
  Eigen::RowVectorXd vector;
  Eigen::VectorXd attention;
};
Embedding embed(const grad::ParameterStore& store, const std::string& prefix,
                const EmbedderConfig& config, const FeatureSequence& features);

// Jaccard-weighted batch-contrastive loss. For each anchor, every other
// batch element with label overlap is a positive weighted by the Jaccard
// similarity; anchors with no positives contribute zero. Total is the sum
// over anchors. Embeddings must be unit rows (tolerance 1e-6).
grad::Value setcon_loss(grad::Graph& g, const std::vector<grad::Value>& embeddings,
                        const std::vector<LabelVector>& labels, double temperature);

// Scalar convenience wrapper over plain unit vectors (no gradients).
double setcon_loss_value(const Matd& embeddings,
                         const std::vector<LabelVector>& labels,
                         double temperature);

// Seeded batch sampler guaranteeing every anchor has at least one in-batch
// partner with Jaccard similarity > 0. Deterministic per (seed, step).
class BatchSampler {
 public:
  BatchSampler(const Corpus& corpus, Split split, int batch_size, uint64_t seed);
  std::vector<size_t> sample(uint64_t step) const;  // corpus indices
  size_t population() const { return pool_.size(); }

 private:
  const Corpus& corpus_;
  std::vector<size_t> pool_;                      // indices of the split
  std::vector<std::vector<size_t>> partners_;     // per pool member, pool posns
  int batch_size_;
  uint64_t seed_;
};

// Retrieval quality: a neighbor is relevant iff the Jaccard distance of its
// labels to the query's is ≤ relevance_threshold round the top-K by inner
// product. Self-matches are excluded by id.
struct RecallReport {
  double hit_rate = 0.0;        // queries with ≥ 1 relevant neighbor in top-K
  double mean_precision = 0.0;  // mean fraction of relevant among top-K
};
RecallReport recall_at_k(const std::vector<EmbeddingRecord>& records,
                         const std::vector<EmbeddingRecord>& queries, int k,
                         double relevance_threshold = 0.5);

struct EmbedderEpoch {
  double mean_loss = 0.0;
  double val_hit_rate = 0.0;
  double val_mean_precision = 0.0;
};

struct EmbedderTraining {
  grad::ParameterStore params;      // best-epoch parameters
  std::vector<EmbedderEpoch> history;
  int best_epoch = -1;              // -1: the untrained initialization won
  bool diverged = false;
};

struct EmbedderTrainOptions {
  int epochs = 20;
  int batch_size = 64;
  double lr = 1e-4;
  uint64_t seed = 0;
  int recall_k = 5;
  double relevance_threshold = 0.5;
};

// Adam (no weight decay) on the contrastive loss over sampled batches;
// keeps the parameters of the epoch with the best validation hit-rate@K.
EmbedderTraining train_embedder(const Corpus& corpus, const EmbedderConfig& config,
                                const EmbedderTrainOptions& opts);

// Embeds every clip of a split in eval mode (frozen parameters).
std::vector<EmbeddingRecord> embed_split(const grad::ParameterStore& store,
                                         const std::string& prefix,
                                         const EmbedderConfig& config,
                                         const Corpus& corpus, Split split);

// Frame-mean baseline embedding: mean over frames, L2-normalized. The
// metric-learning ablation builds its index from these.
std::vector<EmbeddingRecord> mean_pool_split(const Corpus& corpus, Split split);

// Embedding dump "SFKE": magic, version u32=1, count u32, dim u32; per
// record id (u16 len + UTF-8), 5 label bytes, dim×f32 vector. The JSONL twin
// carries the same records for external projection tools.
void save_embeddings(const std::vector<EmbeddingRecord>& records,
                     const std::string& path);
std::vector<EmbeddingRecord> load_embeddings(const std::string& path);
void save_embeddings_jsonl(const std::vector<EmbeddingRecord>& records,
                           const std::string& path);

}  // namespace sfk
