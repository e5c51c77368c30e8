#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <thread>

#include "lanse/common.hpp"
#include "lanse/judge.hpp"
#include "oracles.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

using namespace lanse;
using nlohmann::json;

namespace {

class CountingJudge : public JudgeBackend {
public:
    explicit CountingJudge(std::string reply) : reply_(std::move(reply)) {}
    std::string complete(const JudgeRequest&) override {
        ++calls;
        return reply_;
    }
    int calls = 0;

private:
    std::string reply_;
};

}  // namespace

TEST(Template, FillsKnownKeysOnly) {
    EXPECT_EQ(fill_template("a {x} b {y} {x}", {{"x", "1"}}), "a 1 b {y} 1");
    EXPECT_EQ(fill_template("{x}", {{"x", "{x}"}}), "{x}");
    EXPECT_EQ(fill_template("no markers", {{"x", "1"}}), "no markers");
}

TEST(Prompts, CarryTheirMarkers) {
    EXPECT_NE(prompts::summarize.find("{samples}"), std::string_view::npos);
    EXPECT_NE(prompts::summarize.find("[Commonality:"), std::string_view::npos);
    EXPECT_NE(prompts::categorize_semantic.find("{commonality}"), std::string_view::npos);
    EXPECT_NE(prompts::categorize_realism.find("{samples}"), std::string_view::npos);
    EXPECT_NE(prompts::categorize_physics.find("{samples}"), std::string_view::npos);
    EXPECT_NE(prompts::accuracy.find("{explanation}"), std::string_view::npos);
}

TEST(Parse, Commonality) {
    EXPECT_EQ(parse_commonality("[Commonality: Strawberry-based dessert or dish]"), "Strawberry-based dessert or dish");
    EXPECT_EQ(parse_commonality("Sure! [commonality:  dogs ] done"), "dogs");
    EXPECT_FALSE(parse_commonality("Commonality: dogs"));
    EXPECT_FALSE(parse_commonality("[Commonality: ]"));
}

TEST(Parse, BracketedWord) {
    EXPECT_EQ(parse_bracketed_word("[human]"), "human");
    EXPECT_EQ(parse_bracketed_word("The answer is [ Animal ]."), "Animal");
    EXPECT_FALSE(parse_bracketed_word("human"));
}

TEST(Parse, LabeledExplanation) {
    auto r = parse_labeled_explanation("[Style, Explanation: cartoon drawings]");
    ASSERT_TRUE(r);
    EXPECT_EQ(r->first, "Style");
    EXPECT_EQ(r->second, "cartoon drawings");
    EXPECT_FALSE(parse_labeled_explanation("[Style] cartoon"));
}

TEST(Parse, YesNo) {
    EXPECT_EQ(parse_yes_no("Yes"), true);
    EXPECT_EQ(parse_yes_no("  no."), false);
    EXPECT_EQ(parse_yes_no("\"YES\""), true);
    EXPECT_FALSE(parse_yes_no("maybe"));
    EXPECT_FALSE(parse_yes_no("yesterday"));
    EXPECT_FALSE(parse_yes_no(""));
}

TEST(Request, CacheKeyDependsOnPromptMediaAndAttempt) {
    JudgeRequest a{"p", {{"x", "u", "c"}}, 0};
    JudgeRequest b = a;
    EXPECT_EQ(a.cache_key(), b.cache_key());
    b.attempt = 1;
    EXPECT_NE(a.cache_key(), b.cache_key());
    b = a;
    b.media[0].uri = "v";
    EXPECT_NE(a.cache_key(), b.cache_key());
    b = a;
    b.prompt = "q";
    EXPECT_NE(a.cache_key(), b.cache_key());
}

TEST(Transcript, RecordsAndReplays) {
    const auto dir = oracle::temp_dir("transcript");
    const auto path = dir + "/t.jsonl";
    JudgeRequest req{"hello {samples}", {{"p1", "synth://p1", "cap"}}, 0};
    {
        auto t = std::make_shared<Transcript>(path);
        auto live = std::make_shared<CountingJudge>("[Commonality: x]");
        TranscriptJudge j(t, live);
        EXPECT_EQ(j.complete(req), "[Commonality: x]");
        EXPECT_EQ(j.complete(req), "[Commonality: x]");
        EXPECT_EQ(live->calls, 1);
        EXPECT_EQ(j.hits(), 1u);
        EXPECT_EQ(j.misses(), 1u);
    }
    auto t = std::make_shared<Transcript>(path);
    EXPECT_EQ(t->size(), 1u);
    TranscriptJudge replay(t);
    EXPECT_EQ(replay.complete(req), "[Commonality: x]");
    req.attempt = 1;
    try {
        replay.complete(req);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::Judge);
    }
}

TEST(Transcript, CorruptLineIsReported) {
    const auto dir = oracle::temp_dir("transcript-bad");
    write_text_file(dir + "/t.jsonl", "{\"key\":\"a\",\"reply\":\"b\"}\nnot json\n");
    try {
        Transcript t(dir + "/t.jsonl");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::Format);
        EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
    }
}

TEST(HttpJudge, BodyInterleavesImagesAndCaptions) {
    HttpJudge j({"http://127.0.0.1:1/v1/chat/completions", "", "m", 5});
    JudgeRequest req{"before {samples} after", {{"a", "https://x/a.png", "cap a"}, {"b", "https://x/b.png", ""}}, 0};
    const auto body = json::parse(j.build_body(req));
    EXPECT_EQ(body["model"], "m");
    EXPECT_EQ(body["temperature"], 0);
    const auto& content = body["messages"][0]["content"];
    ASSERT_EQ(content.size(), 5u);
    EXPECT_EQ(content[0]["text"], "before ");
    EXPECT_EQ(content[1]["image_url"]["url"], "https://x/a.png");
    EXPECT_EQ(content[2]["text"], "cap a");
    EXPECT_EQ(content[3]["image_url"]["url"], "https://x/b.png");
    EXPECT_EQ(content[4]["text"], " after");
}

TEST(HttpJudge, InlinesLocalFilesAsDataUrls) {
    const auto dir = oracle::temp_dir("judge-img");
    write_text_file(dir + "/i.png", "PNGDATA");
    HttpJudge j({"http://127.0.0.1:1/", "", "m", 5});
    JudgeRequest req{"{samples}", {{"a", dir + "/i.png", ""}}, 0};
    const auto body = json::parse(j.build_body(req));
    const std::string url = body["messages"][0]["content"][0]["image_url"]["url"];
    EXPECT_EQ(url.rfind("data:image/png;base64,", 0), 0u);
    const auto payload = base64_decode(url.substr(url.find(',') + 1));
    EXPECT_EQ(std::string(payload.begin(), payload.end()), "PNGDATA");
}

TEST(HttpJudge, TalksToChatEndpoint) {
    httplib::Server server;
    std::string seen_auth;
    server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        seen_auth = req.get_header_value("Authorization");
        res.set_content(R"({"choices":[{"message":{"content":"Yes"}}]})", "application/json");
    });
    server.Post("/broken", [](const httplib::Request&, httplib::Response& res) { res.status = 500; });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread t([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    const std::string base = "http://127.0.0.1:" + std::to_string(port);
    HttpJudge ok({base + "/v1/chat/completions", "secret", "m", 5});
    EXPECT_EQ(ok.complete({"q", {}, 0}), "Yes");
    EXPECT_EQ(seen_auth, "Bearer secret");

    HttpJudge broken({base + "/broken", "", "m", 5});
    EXPECT_THROW(broken.complete({"q", {}, 0}), Error);

    server.stop();
    t.join();
}

TEST(HttpJudge, ConfigFromEnv) {
    ::unsetenv("LANSE_LMM_URL");
    EXPECT_FALSE(HttpJudgeConfig::from_env());
    ::setenv("LANSE_LMM_URL", "http://h/x", 1);
    ::setenv("LANSE_LMM_MODEL", "mm", 1);
    auto c = HttpJudgeConfig::from_env();
    ASSERT_TRUE(c);
    EXPECT_EQ(c->url, "http://h/x");
    EXPECT_EQ(c->model, "mm");
    ::unsetenv("LANSE_LMM_URL");
    ::unsetenv("LANSE_LMM_MODEL");
}
