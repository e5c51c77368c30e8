#include "lanse/judge.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>

#include "binary_io.hpp"
#include "lanse/common.hpp"

// After Eigen: resolv.h (pulled in by httplib) defines a macro named _res.
#include <httplib.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

namespace lanse {

using nlohmann::json;

namespace {

constexpr std::string_view kSamplesMarker = "{samples}";

std::string trim(std::string_view s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::string mime_for(const std::filesystem::path& p) {
    auto ext = lower(p.extension().string());
    if (ext == ".png") return "image/png";
    if (ext == ".webp") return "image/webp";
    if (ext == ".gif") return "image/gif";
    return "image/jpeg";
}

std::string image_reference(const std::string& uri) {
    std::string path = uri;
    if (path.rfind("file://", 0) == 0) path = path.substr(7);
    std::error_code ec;
    if (!path.empty() && std::filesystem::is_regular_file(path, ec)) {
        auto bytes = detail::read_binary_file(path);
        return "data:" + mime_for(path) + ";base64," + base64_encode(bytes);
    }
    return uri;
}

}  // namespace

std::string fill_template(std::string_view tmpl, const std::map<std::string, std::string>& values) {
    std::string out(tmpl);
    for (const auto& [key, value] : values) {
        const std::string marker = "{" + key + "}";
        for (auto pos = out.find(marker); pos != std::string::npos; pos = out.find(marker, pos + value.size()))
            out.replace(pos, marker.size(), value);
    }
    return out;
}

std::string JudgeRequest::prompt_hash() const { return sha256_hex(prompt); }

std::string JudgeRequest::media_hash() const {
    json j = json::array();
    for (const auto& m : media) j.push_back({m.pair_id, m.uri, m.caption});
    return sha256_hex(j.dump());
}

std::string JudgeRequest::cache_key() const {
    return sha256_hex(prompt_hash() + ":" + media_hash() + ":" + std::to_string(attempt));
}

// --- HTTP ------------------------------------------------------------------

std::optional<HttpJudgeConfig> HttpJudgeConfig::from_env() {
    const char* url = std::getenv("LANSE_LMM_URL");
    if (url == nullptr || *url == '\0') return std::nullopt;
    HttpJudgeConfig c;
    c.url = url;
    if (const char* key = std::getenv("LANSE_LMM_KEY")) c.api_key = key;
    if (const char* model = std::getenv("LANSE_LMM_MODEL")) c.model = model;
    return c;
}

HttpJudge::HttpJudge(HttpJudgeConfig config) : config_(std::move(config)) {}

std::string HttpJudge::build_body(const JudgeRequest& request) const {
    json content = json::array();
    auto add_text = [&](std::string_view text) {
        if (!text.empty()) content.push_back({{"type", "text"}, {"text", std::string(text)}});
    };
    auto marker = request.prompt.find(kSamplesMarker);
    add_text(std::string_view(request.prompt).substr(0, marker));
    for (const auto& m : request.media) {
        content.push_back({{"type", "image_url"}, {"image_url", {{"url", image_reference(m.uri)}}}});
        add_text(m.caption);
    }
    if (marker != std::string::npos) add_text(std::string_view(request.prompt).substr(marker + kSamplesMarker.size()));

    json body = {
        {"model", config_.model},
        {"temperature", 0},
        {"messages", json::array({{{"role", "user"}, {"content", content}}})},
    };
    return body.dump();
}

std::string HttpJudge::complete(const JudgeRequest& request) {
    static const std::regex url_re(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(config_.url, m, url_re)) throw Error(ErrorCode::Judge, "bad LMM url: " + config_.url);
    const std::string origin = m[1];
    const std::string path = m[2].matched ? std::string(m[2]) : std::string("/");

    httplib::Client client(origin);
    client.set_read_timeout(config_.timeout_seconds, 0);
    client.set_connection_timeout(10, 0);
    httplib::Headers headers;
    if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

    auto res = client.Post(path, headers, build_body(request), "application/json");
    if (!res) throw Error(ErrorCode::Judge, "LMM request failed: " + httplib::to_string(res.error()));
    if (res->status != 200) throw Error(ErrorCode::Judge, "LMM returned HTTP " + std::to_string(res->status));
    try {
        auto reply = json::parse(res->body);
        const auto& msg = reply.at("choices").at(0).at("message").at("content");
        if (msg.is_string()) return msg.get<std::string>();
        std::string text;
        for (const auto& part : msg)
            if (part.value("type", "") == "text") text += part.value("text", "");
        return text;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::Judge, std::string("unexpected LMM response: ") + e.what());
    }
}

// --- transcript --------------------------------------------------------------

Transcript::Transcript(std::string path) : path_(std::move(path)) {
    std::ifstream in(path_);
    if (!in) return;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.empty()) continue;
        try {
            auto j = json::parse(line);
            replies_[j.at("key").get<std::string>()] = j.at("reply").get<std::string>();
        } catch (const json::exception& e) {
            throw Error(ErrorCode::Format, "transcript " + path_ + " line " + std::to_string(n) + ": " + e.what());
        }
    }
}

std::optional<std::string> Transcript::lookup(const std::string& key) const {
    std::lock_guard lock(mutex_);
    auto it = replies_.find(key);
    if (it == replies_.end()) return std::nullopt;
    return it->second;
}

void Transcript::record(const JudgeRequest& request, const std::string& reply) {
    const auto key = request.cache_key();
    json entry = {{"key", key},
                  {"prompt_hash", request.prompt_hash()},
                  {"media_hash", request.media_hash()},
                  {"attempt", request.attempt},
                  {"reply", reply}};
    const auto line = entry.dump() + "\n";
    std::lock_guard lock(mutex_);
    if (!replies_.emplace(key, reply).second) return;
    if (path_.empty()) return;
    auto parent = std::filesystem::path(path_).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream out(path_, std::ios::app | std::ios::binary);
    out << line;
    out.flush();
    if (!out) throw Error(ErrorCode::Io, "cannot append to transcript " + path_);
}

std::size_t Transcript::size() const {
    std::lock_guard lock(mutex_);
    return replies_.size();
}

TranscriptJudge::TranscriptJudge(std::shared_ptr<Transcript> transcript, std::shared_ptr<JudgeBackend> live)
    : transcript_(std::move(transcript)), live_(std::move(live)) {
    if (!transcript_) transcript_ = std::make_shared<Transcript>();
}

std::string TranscriptJudge::complete(const JudgeRequest& request) {
    if (auto hit = transcript_->lookup(request.cache_key())) {
        ++hits_;
        return *hit;
    }
    ++misses_;
    if (!live_) throw Error(ErrorCode::Judge, "transcript miss in replay-only mode (key " + request.cache_key() + ")");
    auto reply = live_->complete(request);
    transcript_->record(request, reply);
    return reply;
}

// --- parsing -----------------------------------------------------------------

std::optional<std::string> parse_commonality(std::string_view reply) {
    static const std::regex re(R"(\[\s*Commonality\s*:\s*([^\]]*)\])", std::regex::icase);
    std::match_results<std::string_view::const_iterator> m;
    if (!std::regex_search(reply.begin(), reply.end(), m, re)) return std::nullopt;
    auto text = trim(std::string(m[1].first, m[1].second));
    if (text.empty()) return std::nullopt;
    return text;
}

std::optional<std::string> parse_bracketed_word(std::string_view reply) {
    static const std::regex re(R"(\[\s*([A-Za-z]+)\s*\])");
    std::match_results<std::string_view::const_iterator> m;
    if (!std::regex_search(reply.begin(), reply.end(), m, re)) return std::nullopt;
    return std::string(m[1].first, m[1].second);
}

std::optional<std::pair<std::string, std::string>> parse_labeled_explanation(std::string_view reply) {
    static const std::regex re(R"(\[\s*([A-Za-z]+)\s*,\s*Explanation\s*:\s*([^\]]*)\])", std::regex::icase);
    std::match_results<std::string_view::const_iterator> m;
    if (!std::regex_search(reply.begin(), reply.end(), m, re)) return std::nullopt;
    return std::make_pair(std::string(m[1].first, m[1].second), trim(std::string(m[2].first, m[2].second)));
}

std::optional<bool> parse_yes_no(std::string_view reply) {
    auto text = lower(trim(reply));
    auto start = text.find_first_not_of("\"'`*[( ");
    if (start == std::string::npos) return std::nullopt;
    text = text.substr(start);
    auto word_end = text.find_first_not_of("abcdefghijklmnopqrstuvwxyz");
    auto word = text.substr(0, word_end);
    if (word == "yes") return true;
    if (word == "no") return false;
    return std::nullopt;
}

}  // namespace lanse
