#include "lanse/embedding_store.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <unordered_set>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "binary_io.hpp"

namespace lanse {

using nlohmann::json;

namespace {

constexpr std::uint32_t kCorpusFormatVersion = 1;

bool all_finite(const std::vector<float>& v) {
    return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
}

void normalize_in_place(std::vector<float>& v) {
    double norm = 0.0;
    for (float x : v) norm += double{x} * x;
    norm = std::sqrt(norm);
    if (norm == 0.0) return;
    for (float& x : v) x = static_cast<float>(x / norm);
}

std::string meta_path(const std::string& path) { return path + ".meta.jsonl"; }

bool has_metadata(const EmbeddingPair& p) {
    return p.source_model != "natural" || !p.uri.empty() || !p.caption.empty();
}

}  // namespace

Corpus::Corpus(std::vector<EmbeddingPair> pairs, std::uint32_t d_img, std::uint32_t d_txt)
    : pairs_(std::move(pairs)), d_img_(d_img), d_txt_(d_txt) {
    if (pairs_.empty()) throw Error(ErrorCode::CorpusEmpty, "corpus has no pairs");
    if (d_img_ == 0 || d_txt_ == 0) throw Error(ErrorCode::InvalidArgument, "declared dimensions must be positive");
    index_.reserve(pairs_.size());
    for (std::size_t i = 0; i < pairs_.size(); ++i) {
        const auto& p = pairs_[i];
        if (p.image_emb.size() != d_img_ || p.text_emb.size() != d_txt_)
            throw Error(ErrorCode::DimensionMismatch, "pair '" + p.id + "' does not match corpus dims");
        if (!all_finite(p.image_emb) || !all_finite(p.text_emb))
            throw Error(ErrorCode::InvalidArgument, "pair '" + p.id + "' has non-finite components");
        if (!index_.emplace(p.id, i).second) throw Error(ErrorCode::DuplicateId, "id '" + p.id + "' repeated");
    }
    checksum_ = sha256_hex(encode_corpus_binary(*this));
}

std::optional<std::size_t> Corpus::find(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

IngestResult ingest_pairs(std::vector<EmbeddingPair> records, std::uint32_t d_img, std::uint32_t d_txt,
                          const IngestOptions& options) {
    if (d_img == 0 || d_txt == 0) throw Error(ErrorCode::InvalidArgument, "declared dimensions must be positive");
    std::vector<EmbeddingPair> accepted;
    std::vector<Rejection> rejected;
    std::unordered_set<std::string> seen;
    for (std::size_t i = 0; i < records.size(); ++i) {
        auto& r = records[i];
        auto reject = [&](std::string reason) { rejected.push_back({i, r.id, std::move(reason)}); };
        if (r.id.empty()) {
            reject("missing id");
        } else if (r.image_emb.empty() || r.text_emb.empty()) {
            reject("missing vector");
        } else if (r.image_emb.size() != d_img || r.text_emb.size() != d_txt) {
            reject("dimension mismatch");
        } else if (!all_finite(r.image_emb) || !all_finite(r.text_emb)) {
            reject("non-finite component");
        } else if (!seen.insert(r.id).second) {
            reject("duplicate id");
        } else {
            if (options.normalize) {
                normalize_in_place(r.image_emb);
                normalize_in_place(r.text_emb);
            }
            accepted.push_back(std::move(r));
        }
    }
    for (const auto& rej : rejected)
        spdlog::warn("ingest: record {} ('{}') rejected: {}", rej.index, rej.id, rej.reason);
    if (accepted.empty())
        throw Error(ErrorCode::CorpusEmpty,
                    "no valid records (" + std::to_string(rejected.size()) + " rejected)");
    return IngestResult{Corpus(std::move(accepted), d_img, d_txt), std::move(rejected)};
}

Vec concat_embedding(const EmbeddingPair& pair) {
    Vec out(static_cast<Eigen::Index>(pair.image_emb.size() + pair.text_emb.size()));
    Eigen::Index j = 0;
    for (float x : pair.image_emb) out[j++] = x;
    for (float x : pair.text_emb) out[j++] = x;
    return out;
}

Mat joint_matrix(const Corpus& corpus) {
    Mat m(static_cast<Eigen::Index>(corpus.size()), static_cast<Eigen::Index>(corpus.d()));
    for (std::size_t i = 0; i < corpus.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = concat_embedding(corpus[i]);
    return m;
}

Mat image_matrix(const Corpus& corpus) {
    Mat m(static_cast<Eigen::Index>(corpus.size()), corpus.d_img());
    for (std::size_t i = 0; i < corpus.size(); ++i)
        for (std::uint32_t j = 0; j < corpus.d_img(); ++j) m(static_cast<Eigen::Index>(i), j) = corpus[i].image_emb[j];
    return m;
}

Mat text_matrix(const Corpus& corpus) {
    Mat m(static_cast<Eigen::Index>(corpus.size()), corpus.d_txt());
    for (std::size_t i = 0; i < corpus.size(); ++i)
        for (std::uint32_t j = 0; j < corpus.d_txt(); ++j) m(static_cast<Eigen::Index>(i), j) = corpus[i].text_emb[j];
    return m;
}

std::vector<Corpus> shard_corpus(const Corpus& corpus, std::size_t num_shards, std::uint64_t seed) {
    if (num_shards < 1 || num_shards > corpus.size())
        throw Error(ErrorCode::OutOfRange, "num_shards must be in [1, " + std::to_string(corpus.size()) + "]");
    std::vector<std::size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<Corpus> shards;
    shards.reserve(num_shards);
    const std::size_t base = corpus.size() / num_shards;
    const std::size_t extra = corpus.size() % num_shards;
    std::size_t pos = 0;
    for (std::size_t s = 0; s < num_shards; ++s) {
        std::size_t n = base + (s < extra ? 1 : 0);
        std::vector<EmbeddingPair> members;
        members.reserve(n);
        for (std::size_t j = 0; j < n; ++j) members.push_back(corpus[order[pos++]]);
        shards.emplace_back(std::move(members), corpus.d_img(), corpus.d_txt());
    }
    return shards;
}

// --- JSONL ---------------------------------------------------------------

RawRecords read_records_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
    RawRecords out;
    std::string line;
    std::size_t index = 0;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            auto j = json::parse(line);
            EmbeddingPair p;
            p.id = j.at("id").get<std::string>();
            p.image_emb = j.at("image_emb").get<std::vector<float>>();
            p.text_emb = j.at("text_emb").get<std::vector<float>>();
            if (j.contains("source_model") && !j["source_model"].is_null())
                p.source_model = j["source_model"].get<std::string>();
            if (j.contains("uri") && !j["uri"].is_null()) p.uri = j["uri"].get<std::string>();
            if (j.contains("caption") && !j["caption"].is_null()) p.caption = j["caption"].get<std::string>();
            out.records.push_back(std::move(p));
        } catch (const json::exception& e) {
            // Keep the slot so rejection indices line up with input lines.
            out.malformed.push_back({index, "", std::string("malformed record: ") + e.what()});
            out.records.emplace_back();
        }
        ++index;
    }
    return out;
}

namespace {

json pair_to_json(const EmbeddingPair& p, bool with_vectors) {
    json j;
    j["id"] = p.id;
    if (with_vectors) {
        j["image_emb"] = p.image_emb;
        j["text_emb"] = p.text_emb;
    }
    j["source_model"] = p.source_model;
    j["uri"] = p.uri;
    if (!p.caption.empty()) j["caption"] = p.caption;
    return j;
}

}  // namespace

void write_corpus_jsonl(const Corpus& corpus, const std::string& path) {
    std::string text;
    for (const auto& p : corpus.pairs()) text += pair_to_json(p, true).dump() + "\n";
    write_text_file(path, text);
}

// --- binary --------------------------------------------------------------

std::vector<std::uint8_t> encode_corpus_binary(const Corpus& corpus) {
    detail::ByteWriter w;
    w.magic("LNSE");
    w.put<std::uint32_t>(kCorpusFormatVersion);
    w.put<std::uint32_t>(corpus.d_img());
    w.put<std::uint32_t>(corpus.d_txt());
    w.put<std::uint64_t>(corpus.size());
    for (const auto& p : corpus.pairs()) {
        w.put_string16(p.id);
        for (float x : p.image_emb) w.put(x);
        for (float x : p.text_emb) w.put(x);
    }
    return std::move(w.bytes());
}

RawRecords decode_records_binary(std::span<const std::uint8_t> bytes, std::uint32_t* d_img_out,
                                 std::uint32_t* d_txt_out) {
    detail::ByteReader r(bytes);
    r.expect_magic("LNSE");
    auto version = r.get<std::uint32_t>();
    if (version != kCorpusFormatVersion)
        throw Error(ErrorCode::Format, "unsupported corpus format version " + std::to_string(version));
    auto d_img = r.get<std::uint32_t>();
    auto d_txt = r.get<std::uint32_t>();
    auto count = r.get<std::uint64_t>();
    if (d_img_out) *d_img_out = d_img;
    if (d_txt_out) *d_txt_out = d_txt;
    RawRecords out;
    out.records.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, 1u << 20)));
    for (std::uint64_t i = 0; i < count; ++i) {
        EmbeddingPair p;
        p.id = r.get_string16();
        p.image_emb.resize(d_img);
        p.text_emb.resize(d_txt);
        for (auto& x : p.image_emb) x = r.get<float>();
        for (auto& x : p.text_emb) x = r.get<float>();
        out.records.push_back(std::move(p));
    }
    if (r.remaining() != 0) throw Error(ErrorCode::Format, "trailing bytes after last corpus record");
    return out;
}

void write_corpus(const Corpus& corpus, const std::string& path) {
    detail::write_binary_file(path, encode_corpus_binary(corpus));
    bool any_meta = std::any_of(corpus.pairs().begin(), corpus.pairs().end(), has_metadata);
    if (any_meta) {
        std::string text;
        for (const auto& p : corpus.pairs()) text += pair_to_json(p, false).dump() + "\n";
        write_text_file(meta_path(path), text);
    } else {
        std::filesystem::remove(meta_path(path));
    }
}

Corpus read_corpus(const std::string& path) {
    auto bytes = detail::read_binary_file(path);
    std::uint32_t d_img = 0, d_txt = 0;
    auto raw = decode_records_binary(bytes, &d_img, &d_txt);
    if (std::filesystem::exists(meta_path(path))) {
        std::ifstream in(meta_path(path));
        std::string line;
        std::size_t i = 0;
        while (std::getline(in, line) && i < raw.records.size()) {
            if (line.empty()) continue;
            auto j = json::parse(line);
            auto& p = raw.records[i++];
            if (j.at("id").get<std::string>() != p.id)
                throw Error(ErrorCode::Format, "metadata sidecar out of order at '" + p.id + "'");
            p.source_model = j.value("source_model", std::string("natural"));
            p.uri = j.value("uri", std::string());
            p.caption = j.value("caption", std::string());
        }
    }
    return Corpus(std::move(raw.records), d_img, d_txt);
}

}  // namespace lanse
