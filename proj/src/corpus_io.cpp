#include "sfkit/corpus_io.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <unordered_set>

#include <json.hpp>

#include "sfkit/binio.hpp"
#include "sfkit/errors.hpp"

namespace sfk {

namespace {

constexpr char kFeatureMagic[4] = {'S', 'F', 'K', 'F'};
constexpr uint32_t kFeatureVersion = 1;

nlohmann::json clip_to_json(const ClipRecord& clip) {
  nlohmann::json j;
  j["id"] = clip.id;
  j["speaker"] = clip.speaker;
  std::vector<int> labels(kNumClasses);
  for (int c = 0; c < kNumClasses; ++c) labels[size_t(c)] = clip.labels.test(c);
  j["labels"] = labels;
  j["split"] = split_name(clip.split);
  j["frames"] = clip.frames;
  j["offset"] = clip.offset;
  if (clip.augmented_from)
    j["augmented_from"] = *clip.augmented_from;
  else
    j["augmented_from"] = nullptr;
  return j;
}

ClipRecord clip_from_json(const nlohmann::json& j, size_t line_no) {
  const std::string where = "manifest line " + std::to_string(line_no);
  for (const auto& key : {"id", "speaker", "labels", "split", "frames",
                          "offset", "augmented_from"})
    if (!j.contains(key))
      throw DataError(where + ": missing key '" + std::string(key) + "'");

  ClipRecord clip;
  clip.id = j.at("id").get<std::string>();
  clip.speaker = j.at("speaker").get<std::string>();
  const auto& labels = j.at("labels");
  if (!labels.is_array() || labels.size() != kNumClasses)
    throw DataError(where + ": 'labels' must be an array of 5 ints");
  for (int c = 0; c < kNumClasses; ++c) {
    const int v = labels.at(size_t(c)).get<int>();
    if (v != 0 && v != 1)
      throw DataError(where + ": label entries must be 0 or 1");
    clip.labels.set(c, v == 1);
  }
  clip.split = split_from_name(j.at("split").get<std::string>());
  clip.frames = j.at("frames").get<int>();
  clip.offset = j.at("offset").get<int64_t>();
  if (!j.at("augmented_from").is_null())
    clip.augmented_from = j.at("augmented_from").get<std::string>();
  return clip;
}

}  // namespace

void save_manifest(const Corpus& corpus, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  for (const auto& clip : corpus.clips) os << clip_to_json(clip).dump() << "\n";
  if (!os) throw DataError("write failed for '" + path + "'");
}

Corpus load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open manifest '" + path + "'");
  Corpus corpus;
  std::string line;
  size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("manifest line " + std::to_string(line_no) +
                      ": invalid JSON: " + e.what());
    }
    corpus.clips.push_back(clip_from_json(j, line_no));
  }
  return corpus;
}

void save_features(Corpus& corpus, const std::string& path) {
  if (!corpus.has_features())
    throw DataError("save_features: corpus has no loaded features");
  auto os = binio::open_output(path);
  binio::write_magic(os, kFeatureMagic);
  binio::write_u32(os, kFeatureVersion);
  binio::write_u32(os, uint32_t(corpus.dim));
  int64_t offset = 12;  // header: magic + version + dim
  for (size_t i = 0; i < corpus.clips.size(); ++i) {
    const FeatureSequence& f = corpus.features[i];
    if (f.cols() != corpus.dim)
      throw DataError("clip '" + corpus.clips[i].id + "' has dim " +
                      std::to_string(f.cols()) + ", corpus dim is " +
                      std::to_string(corpus.dim));
    corpus.clips[i].frames = int(f.rows());
    corpus.clips[i].offset = offset;
    binio::write_bytes(os, f.data(), size_t(f.size()) * sizeof(float));
    offset += int64_t(f.size()) * int64_t(sizeof(float));
  }
}

void load_features(Corpus& corpus, const std::string& path) {
  auto is = binio::open_input(path);
  binio::expect_magic(is, kFeatureMagic, path);
  const uint32_t version = binio::read_u32(is, "version");
  if (version != kFeatureVersion)
    throw DataError("'" + path + "': unsupported feature file version " +
                    std::to_string(version));
  const uint32_t dim = binio::read_u32(is, "dim");
  if (dim == 0) throw DataError("'" + path + "': dim must be >= 1");
  if (corpus.dim != 0 && corpus.dim != int(dim))
    throw DataError("'" + path + "': dim " + std::to_string(dim) +
                    " does not match manifest dim " +
                    std::to_string(corpus.dim));
  corpus.dim = int(dim);
  corpus.features.assign(corpus.clips.size(), FeatureSequence());
  for (size_t i = 0; i < corpus.clips.size(); ++i) {
    const ClipRecord& clip = corpus.clips[i];
    if (clip.frames < 1)
      throw DataError("clip '" + clip.id + "': frames must be >= 1");
    if (clip.offset < 12)
      throw DataError("clip '" + clip.id + "': invalid feature offset " +
                      std::to_string(clip.offset));
    is.seekg(clip.offset);
    if (!is)
      throw DataError("clip '" + clip.id + "': seek failed in '" + path + "'");
    FeatureSequence f(clip.frames, int(dim));
    binio::read_bytes(is, f.data(), size_t(f.size()) * sizeof(float),
                      "features of clip '" + clip.id + "'");
    corpus.features[i] = std::move(f);
  }
}

void save_corpus(Corpus& corpus, const std::string& manifest_path,
                 const std::string& features_path) {
  save_features(corpus, features_path);  // assigns offsets first
  save_manifest(corpus, manifest_path);
}

Corpus load_corpus(const std::string& manifest_path,
                   const std::string& features_path) {
  Corpus corpus = load_manifest(manifest_path);
  load_features(corpus, features_path);
  validate_corpus(corpus, true);
  return corpus;
}

void validate_corpus(const Corpus& corpus, bool require_features) {
  std::unordered_set<std::string> ids;
  std::unordered_set<std::string> original_ids;
  for (const auto& clip : corpus.clips) {
    if (!ids.insert(clip.id).second)
      throw DataError("duplicate clip id '" + clip.id + "'");
    if (!clip.augmented_from) original_ids.insert(clip.id);
  }
  for (const auto& clip : corpus.clips) {
    if (!clip.augmented_from) continue;
    if (!original_ids.count(*clip.augmented_from))
      throw DataError("clip '" + clip.id + "': augmented_from '" +
                      *clip.augmented_from +
                      "' does not name an existing non-augmented clip");
  }
  if (!require_features) return;
  if (!corpus.has_features())
    throw DataError("corpus features not loaded");
  for (size_t i = 0; i < corpus.clips.size(); ++i) {
    const auto& f = corpus.features[i];
    if (f.rows() < 1 || f.cols() < 1)
      throw DataError("clip '" + corpus.clips[i].id + "': empty features");
    if (f.cols() != corpus.dim)
      throw DataError("clip '" + corpus.clips[i].id +
                      "': feature dim mismatch");
    if (!f.allFinite())
      throw DataError("clip '" + corpus.clips[i].id +
                      "': non-finite feature values");
  }
}

}  // namespace sfk
