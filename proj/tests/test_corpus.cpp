#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "retlab/corpus.hpp"
#include "retlab/sparse.hpp"

using namespace retlab;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("retlab-test-" + std::to_string(std::rand()) + std::to_string(std::rand()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    out << content;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("tokenize lowercases and splits on punctuation and whitespace") {
    CHECK(tokenize("Hello, World") == std::vector<std::string>{"hello", "world"});
    CHECK(tokenize("") == std::vector<std::string>{});
    CHECK(tokenize("a  b\tc") == std::vector<std::string>{"a", "b", "c"});
    CHECK(tokenize("don't stop-me") == std::vector<std::string>{"don", "t", "stop", "me"});
    CHECK(tokenize("x") == tokenize("  x\n"));
}

TEST_CASE("load_corpus parses tsv") {
    TempDir dir;
    write_file(dir.file("c.tsv"), "d1\thello world\nd2\tfoo\nd3\tbar\n");
    auto docs = load_corpus(dir.file("c.tsv"), CorpusFormat::tsv);
    REQUIRE(docs.size() == 3);
    CHECK(docs[0].id == "d1");
    CHECK(docs[0].text == "hello world");
    CHECK(docs[2].id == "d3");
}

TEST_CASE("load_corpus on an empty file yields an empty corpus") {
    TempDir dir;
    write_file(dir.file("c.tsv"), "");
    CHECK(load_corpus(dir.file("c.tsv"), CorpusFormat::tsv).empty());
}

TEST_CASE("load_corpus rejects duplicate ids, naming the id") {
    TempDir dir;
    write_file(dir.file("c.tsv"), "d1\ta\nd1\tb\n");
    CHECK_THROWS_WITH(load_corpus(dir.file("c.tsv"), CorpusFormat::tsv),
                      Catch::Matchers::ContainsSubstring("d1"));
}

TEST_CASE("load_corpus reports the malformed line number") {
    TempDir dir;
    write_file(dir.file("c.tsv"), "d1\ta\nno-tab-here\n");
    CHECK_THROWS_WITH(load_corpus(dir.file("c.tsv"), CorpusFormat::tsv),
                      Catch::Matchers::ContainsSubstring(":2"));
}

TEST_CASE("jsonl corpus round-trips, including group tags") {
    TempDir dir;
    std::vector<Document> docs{{"a", "alpha beta", "group-0"},
                               {"b", "gamma", ""},
                               {"weird id", "text\twith\ttabs", "filler"}};
    save_corpus(docs, dir.file("c.jsonl"), CorpusFormat::jsonl);
    auto loaded = load_corpus(dir.file("c.jsonl"), CorpusFormat::jsonl);
    REQUIRE(loaded.size() == docs.size());
    for (std::size_t i = 0; i < docs.size(); ++i) {
        CHECK(loaded[i].id == docs[i].id);
        CHECK(loaded[i].text == docs[i].text);
        CHECK(loaded[i].group_tag == docs[i].group_tag);
    }
}

TEST_CASE("tsv corpus save/load round-trips") {
    TempDir dir;
    std::vector<Document> docs{{"d1", "hello world", ""}, {"d2", "foo bar baz", ""}};
    save_corpus(docs, dir.file("c.tsv"), CorpusFormat::tsv);
    auto loaded = load_corpus(dir.file("c.tsv"), CorpusFormat::tsv);
    REQUIRE(loaded.size() == 2);
    CHECK(loaded[0].id == docs[0].id);
    CHECK(loaded[1].text == docs[1].text);
}

TEST_CASE("qrels load keeps only positive judgments") {
    TempDir dir;
    write_file(dir.file("q.tsv"), "q1\t0\td1\t1\nq1\t0\td2\t0\nq2\t0\td3\t2\n");
    auto qrels = load_qrels(dir.file("q.tsv"));
    CHECK(qrels.at("q1") == std::set<std::string>{"d1"});
    CHECK(qrels.at("q2") == std::set<std::string>{"d3"});
}

TEST_CASE("generate_synthetic produces the documented counts") {
    SyntheticSpec spec;
    spec.n_queries = 1;
    spec.groups_per_query = 2;
    spec.docs_per_group = 3;
    spec.n_filler_docs = 10;
    spec.seed = 7;
    auto data = generate_synthetic(spec);
    CHECK(data.corpus.size() == 1 + 6 + 10);
    CHECK(data.queries.size() == 1);
    REQUIRE(data.qrels.size() == 1);
    CHECK(data.qrels.at(data.queries[0].id).size() == 1);
}

TEST_CASE("generate_synthetic is deterministic under seed") {
    SyntheticSpec spec;
    spec.n_queries = 4;
    spec.noise_rate = 0.3;
    spec.seed = 99;
    TempDir dir;
    auto a = generate_synthetic(spec);
    auto b = generate_synthetic(spec);
    save_corpus(a.corpus, dir.file("a.jsonl"), CorpusFormat::jsonl);
    save_corpus(b.corpus, dir.file("b.jsonl"), CorpusFormat::jsonl);
    CHECK(read_file(dir.file("a.jsonl")) == read_file(dir.file("b.jsonl")));
    REQUIRE(a.queries.size() == b.queries.size());
    for (std::size_t i = 0; i < a.queries.size(); ++i) CHECK(a.queries[i].text == b.queries[i].text);
}

TEST_CASE("synthetic token-overlap structure holds with zero noise") {
    SyntheticSpec spec;
    spec.n_queries = 5;
    spec.groups_per_query = 3;
    spec.docs_per_group = 2;
    spec.n_filler_docs = 20;
    spec.noise_rate = 0.0;
    spec.seed = 3;
    auto data = generate_synthetic(spec);
    std::map<std::string, std::set<std::string>> qtokens;
    for (const auto& q : data.queries) {
        auto toks = tokenize(q.text);
        qtokens[q.id] = {toks.begin(), toks.end()};
    }
    for (const auto& d : data.corpus) {
        auto toks = tokenize(d.text);
        std::set<std::string> dtoks(toks.begin(), toks.end());
        for (const auto& [qid, qt] : qtokens) {
            std::size_t shared = 0;
            for (const auto& t : dtoks) shared += qt.count(t);
            bool own_query = d.id.rfind(qid + "-", 0) == 0;
            if (d.group_tag == "filler") {
                CHECK(shared == 0);
            } else if (d.group_tag == "positive" && own_query) {
                CHECK(shared == qt.size());  // positive covers every aspect
            } else if (own_query) {
                CHECK(shared >= 1);          // group distractor covers one aspect
                CHECK(shared < qt.size());   // and strictly less than the positive
            }
        }
    }
}

TEST_CASE("synthetic group docs outscore fillers under BM25") {
    // derived check: group distractors share tokens with their query, fillers
    // never do, so every group doc must outrank every filler
    SyntheticSpec spec;
    spec.n_queries = 3;
    spec.groups_per_query = 2;
    spec.docs_per_group = 3;
    spec.n_filler_docs = 15;
    spec.noise_rate = 0.1;
    spec.seed = 11;
    auto data = generate_synthetic(spec);
    auto index = build_sparse_index(data.corpus);
    for (const auto& q : data.queries) {
        auto ranked = bm25_topk(index, q, int(data.corpus.size()));
        std::map<std::string, double> score;
        for (const auto& [did, s] : ranked) score[did] = s;
        double min_group = 1e300, max_filler = 0.0;
        for (const auto& d : data.corpus) {
            if (d.id.rfind(q.id + "-g", 0) == 0)
                min_group = std::min(min_group, score.count(d.id) ? score[d.id] : 0.0);
            if (d.group_tag == "filler")
                max_filler = std::max(max_filler, score.count(d.id) ? score[d.id] : 0.0);
        }
        CHECK(min_group > max_filler);
    }
}

TEST_CASE("generate_synthetic rejects impossible vocab sizes") {
    SyntheticSpec spec;
    spec.vocab_size = 4;
    spec.aspect_tokens_per_query = 10;
    CHECK_THROWS_AS(generate_synthetic(spec), ConfigError);
    SyntheticSpec bad;
    bad.noise_rate = 1.5;
    CHECK_THROWS_AS(generate_synthetic(bad), ConfigError);
    SyntheticSpec bad2;
    bad2.groups_per_query = 0;
    CHECK_THROWS_AS(generate_synthetic(bad2), ConfigError);
}
