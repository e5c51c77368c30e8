#pragma once

#include <atomic>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace lanse {

namespace prompts {
// Verbatim templates compiled from core/prompts/*.txt.
extern const std::string_view summarize;
extern const std::string_view categorize_semantic;
extern const std::string_view categorize_realism;
extern const std::string_view categorize_physics;
extern const std::string_view accuracy;
}  // namespace prompts

/// Replaces `{key}` for each given key; other braces are left untouched.
std::string fill_template(std::string_view tmpl, const std::map<std::string, std::string>& values);

/// One image (by locator) with its caption, shown to the judge.
struct MediaItem {
    std::string pair_id;
    std::string uri;
    std::string caption;
};

/// A chat request: prompt text containing a `{samples}` marker where media
/// are interleaved, plus the retry attempt number.
struct JudgeRequest {
    std::string prompt;
    std::vector<MediaItem> media;
    int attempt = 0;

    std::string prompt_hash() const;
    std::string media_hash() const;
    /// Transcript key: hash of (prompt hash, media hash, attempt).
    std::string cache_key() const;
};

class JudgeBackend {
public:
    virtual ~JudgeBackend() = default;
    /// Returns the raw text reply. Throws Error(ErrorCode::Judge) on transport failure.
    virtual std::string complete(const JudgeRequest& request) = 0;
};

struct HttpJudgeConfig {
    std::string url;  // chat-completions endpoint, http:// or https://
    std::string api_key;
    std::string model;
    int timeout_seconds = 120;

    /// Reads LANSE_LMM_URL, LANSE_LMM_KEY, LANSE_LMM_MODEL; nullopt when the URL is unset.
    static std::optional<HttpJudgeConfig> from_env();
};

/// OpenAI-style chat endpoint. Local image paths are inlined as data URLs;
/// other URIs are passed through as image_url references.
class HttpJudge final : public JudgeBackend {
public:
    explicit HttpJudge(HttpJudgeConfig config);
    std::string complete(const JudgeRequest& request) override;

    /// The JSON body that `complete` would POST (exposed for tests).
    std::string build_body(const JudgeRequest& request) const;

private:
    HttpJudgeConfig config_;
};

/// Append-only JSONL log of judge replies keyed by JudgeRequest::cache_key.
class Transcript {
public:
    Transcript() = default;
    /// Loads existing entries from `path` (if it exists) and appends new ones there.
    explicit Transcript(std::string path);

    std::optional<std::string> lookup(const std::string& key) const;
    void record(const JudgeRequest& request, const std::string& reply);
    std::size_t size() const;

private:
    std::string path_;
    mutable std::mutex mutex_;
    std::map<std::string, std::string> replies_;
};

/// Serves replies from a transcript; on a miss it forwards to `live` and
/// records the reply, or throws Error(ErrorCode::Judge) in replay-only mode.
class TranscriptJudge final : public JudgeBackend {
public:
    TranscriptJudge(std::shared_ptr<Transcript> transcript, std::shared_ptr<JudgeBackend> live = nullptr);
    std::string complete(const JudgeRequest& request) override;

    std::size_t hits() const { return hits_; }
    std::size_t misses() const { return misses_; }

private:
    std::shared_ptr<Transcript> transcript_;
    std::shared_ptr<JudgeBackend> live_;
    std::atomic<std::size_t> hits_{0};
    std::atomic<std::size_t> misses_{0};
};

// --- reply parsing -------------------------------------------------------

/// Text inside "[Commonality: ...]", trimmed; nullopt if absent or empty.
std::optional<std::string> parse_commonality(std::string_view reply);
/// First bracketed word, e.g. "[human]"; returns the raw word.
std::optional<std::string> parse_bracketed_word(std::string_view reply);
/// "[Style, Explanation: ...]" and friends; returns (label, explanation).
std::optional<std::pair<std::string, std::string>> parse_labeled_explanation(std::string_view reply);
/// Leading yes/no, case-insensitive.
std::optional<bool> parse_yes_no(std::string_view reply);

}  // namespace lanse
