#pragma once

#include <string>

#include "sfkit/corpus.hpp"

namespace sfk {

// manifest.jsonl: one clip per line, UTF-8, keys
// {"id","speaker","labels":[5 ints],"split","frames","offset","augmented_from"}.
// features.bin ("SFKF"): magic, version u32=1, dim u32, then concatenated
// frame blocks as 32-bit little-endian floats; each clip's `offset` is the
// absolute byte offset of its first float.

void save_manifest(const Corpus& corpus, const std::string& path);
Corpus load_manifest(const std::string& path);

// Writes features.bin and rewrites each clip's offset to its final location.
void save_features(Corpus& corpus, const std::string& path);
// Loads feature matrices for all clips using their manifest offsets.
void load_features(Corpus& corpus, const std::string& path);

// manifest + features in one call.
void save_corpus(Corpus& corpus, const std::string& manifest_path,
                 const std::string& features_path);
Corpus load_corpus(const std::string& manifest_path,
                   const std::string& features_path);

// Structural checks shared by ingest and the loaders: unique ids, valid
// augmented_from references, uniform feature dim, finite values.
void validate_corpus(const Corpus& corpus, bool require_features);

}  // namespace sfk
