#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "lanse/common.hpp"

namespace lanse {

/// One image-caption record as produced by an external encoder.
struct EmbeddingPair {
    std::string id;
    std::vector<float> image_emb;
    std::vector<float> text_emb;
    std::string source_model = "natural";
    std::string uri;
    // Not part of the binary format; carried in the metadata sidecar.
    std::string caption;
};

/// Immutable, validated collection of pairs with homogeneous dimensions.
class Corpus {
public:
    /// Validates dimensions, finiteness and id uniqueness; throws on violation.
    Corpus(std::vector<EmbeddingPair> pairs, std::uint32_t d_img, std::uint32_t d_txt);

    std::size_t size() const { return pairs_.size(); }
    const EmbeddingPair& operator[](std::size_t i) const { return pairs_[i]; }
    const std::vector<EmbeddingPair>& pairs() const { return pairs_; }
    std::uint32_t d_img() const { return d_img_; }
    std::uint32_t d_txt() const { return d_txt_; }
    std::size_t d() const { return std::size_t{d_img_} + d_txt_; }
    const std::string& checksum() const { return checksum_; }
    std::optional<std::size_t> find(const std::string& id) const;

private:
    std::vector<EmbeddingPair> pairs_;
    std::uint32_t d_img_;
    std::uint32_t d_txt_;
    std::string checksum_;
    std::unordered_map<std::string, std::size_t> index_;
};

struct Rejection {
    std::size_t index;
    std::string id;
    std::string reason;
};

struct IngestOptions {
    // L2-normalize image and text embeddings independently before storing.
    bool normalize = false;
};

struct IngestResult {
    Corpus corpus;
    std::vector<Rejection> rejected;
};

/// Validates raw records against the declared dims. Invalid records are
/// reported, not fatal; an empty result throws ErrorCode::CorpusEmpty.
IngestResult ingest_pairs(std::vector<EmbeddingPair> records, std::uint32_t d_img, std::uint32_t d_txt,
                          const IngestOptions& options = {});

/// Joint vector [image_emb, text_emb].
Vec concat_embedding(const EmbeddingPair& pair);
/// Row i is concat_embedding(corpus[i]).
Mat joint_matrix(const Corpus& corpus);
Mat image_matrix(const Corpus& corpus);
Mat text_matrix(const Corpus& corpus);

/// Seeded shuffle followed by a contiguous split; sizes differ by at most one.
std::vector<Corpus> shard_corpus(const Corpus& corpus, std::size_t num_shards, std::uint64_t seed);

// --- file formats ---------------------------------------------------------

/// Line-delimited JSON records. Parse failures become rejections with the line index.
struct RawRecords {
    std::vector<EmbeddingPair> records;
    std::vector<Rejection> malformed;
};
RawRecords read_records_jsonl(const std::string& path);
void write_corpus_jsonl(const Corpus& corpus, const std::string& path);

/// "LNSE" binary: header then per-record id + float32 vectors. Metadata
/// (source_model, uri, caption) goes to `<path>.meta.jsonl` when present.
std::vector<std::uint8_t> encode_corpus_binary(const Corpus& corpus);
RawRecords decode_records_binary(std::span<const std::uint8_t> bytes, std::uint32_t* d_img = nullptr,
                                 std::uint32_t* d_txt = nullptr);
void write_corpus(const Corpus& corpus, const std::string& path);
Corpus read_corpus(const std::string& path);

}  // namespace lanse
