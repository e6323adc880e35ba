#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <set>

#include "retlab/dense_index.hpp"

using namespace retlab;
namespace fs = std::filesystem;

namespace {

DenseIndex random_index(Rng& rng, int n, int dim) {
    DenseIndex index;
    index.dim = dim;
    index.model_fingerprint = 1;
    for (int i = 0; i < n; ++i) {
        index.ids.push_back("d" + std::to_string(i));
        for (int e = 0; e < dim; ++e) index.embeddings.push_back(float(rng.gaussian()));
    }
    return index;
}

std::vector<float> random_probe(Rng& rng, int dim) {
    std::vector<float> p;
    for (int e = 0; e < dim; ++e) p.push_back(float(rng.gaussian()));
    return p;
}

// Brute-force oracle: score every row, full sort with the same tie rule.
std::vector<std::pair<std::string, double>> brute_topk(const DenseIndex& index,
                                                       std::span<const float> probe, int k,
                                                       const std::set<std::string>& exclude = {}) {
    std::vector<std::pair<std::string, double>> all;
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (exclude.count(index.ids[i])) continue;
        double s = 0.0;
        for (int e = 0; e < index.dim; ++e)
            s += double(probe[std::size_t(e)]) * double(index.embeddings[i * std::size_t(index.dim) + std::size_t(e)]);
        all.emplace_back(index.ids[i], s);
    }
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    if (int(all.size()) > k) all.resize(std::size_t(k));
    return all;
}

DenseIndex to_ivf(const DenseIndex& exact, IvfParams params, std::uint64_t seed) {
    DenseIndex ivf = exact;
    ivf.mode = IndexMode::ivf;
    ivf.ivf = params;
    ivf.ivf.n_clusters = std::min(params.n_clusters, int(exact.size()));
    ivf.ivf.n_probe = std::min(params.n_probe, ivf.ivf.n_clusters);
    std::vector<int> assignment;
    detail::kmeans(ivf, ivf.ivf.n_clusters, params.kmeans_iters, seed, ivf.centroids, assignment);
    ivf.cluster_members.assign(std::size_t(ivf.ivf.n_clusters), {});
    for (std::size_t i = 0; i < assignment.size(); ++i)
        ivf.cluster_members[std::size_t(assignment[i])].push_back(int(i));
    return ivf;
}

std::string temp_path(const std::string& name) {
    return (fs::temp_directory_path() / ("retlab-di-" + std::to_string(std::rand()) + name))
        .string();
}

}  // namespace

TEST_CASE("exact topk matches the brute-force oracle") {
    Rng rng(2024);
    for (int trial = 0; trial < 25; ++trial) {
        int n = 5 + int(rng.below(200));
        int dim = 2 + int(rng.below(16));
        auto index = random_index(rng, n, dim);
        auto probe = random_probe(rng, dim);
        for (int k : {1, 3, 10, n + 5}) {
            auto got = topk(index, probe, k);
            auto want = brute_topk(index, probe, k);
            REQUIRE(got.size() == want.size());
            for (std::size_t i = 0; i < got.size(); ++i) {
                CHECK(got[i].first == want[i].first);
                CHECK(got[i].second == want[i].second);
            }
        }
    }
}

TEST_CASE("topk breaks score ties by ascending id") {
    DenseIndex index;
    index.dim = 1;
    index.ids = {"z", "a", "m"};
    index.embeddings = {1.f, 1.f, 1.f};
    std::vector<float> probe{1.f};
    auto got = topk(index, probe, 3);
    REQUIRE(got.size() == 3);
    CHECK(got[0].first == "a");
    CHECK(got[1].first == "m");
    CHECK(got[2].first == "z");
}

TEST_CASE("topk honors the exclude set") {
    Rng rng(5);
    auto index = random_index(rng, 50, 4);
    auto probe = random_probe(rng, 4);
    std::set<std::string> exclude{"d0", "d7", "d49"};
    auto got = topk(index, probe, 50, exclude);
    CHECK(got.size() == 47);
    for (const auto& [id, s] : got) CHECK(exclude.count(id) == 0);
    auto want = brute_topk(index, probe, 50, exclude);
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i].first == want[i].first);
}

TEST_CASE("topk validates arguments") {
    Rng rng(6);
    auto index = random_index(rng, 10, 4);
    std::vector<float> short_probe{1.f, 2.f};
    CHECK_THROWS_AS(topk(index, short_probe, 5), ConfigError);
    auto probe = random_probe(rng, 4);
    CHECK_THROWS_AS(topk(index, probe, 0), ConfigError);
}

TEST_CASE("ivf cluster members partition the rows") {
    Rng rng(7);
    auto exact = random_index(rng, 300, 8);
    auto ivf = to_ivf(exact, IvfParams{16, 4, 10}, 11);
    std::set<int> seen;
    for (const auto& members : ivf.cluster_members)
        for (int r : members) CHECK(seen.insert(r).second);
    CHECK(seen.size() == exact.size());
}

TEST_CASE("ivf probing every cluster reproduces exact search") {
    Rng rng(8);
    auto exact = random_index(rng, 200, 6);
    auto ivf = to_ivf(exact, IvfParams{12, 12, 10}, 3);  // n_probe == n_clusters
    auto probe = random_probe(rng, 6);
    auto a = topk(ivf, probe, 20);
    auto b = topk(exact, probe, 20);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].first == b[i].first);
        CHECK(a[i].second == b[i].second);
    }
}

TEST_CASE("ivf recall on clustered data is high and knn_recall measures it") {
    // Gaussian-mixture data so clusters are real; the acceptance suite runs
    // the larger, documented version of this measurement.
    Rng rng(9);
    int dim = 8, n_centers = 20;
    std::vector<std::vector<float>> centers;
    for (int c = 0; c < n_centers; ++c) centers.push_back(random_probe(rng, dim));
    DenseIndex exact;
    exact.dim = dim;
    exact.model_fingerprint = 42;
    for (int i = 0; i < 2000; ++i) {
        const auto& ctr = centers[rng.below(std::uint64_t(n_centers))];
        exact.ids.push_back("d" + std::to_string(i));
        for (int e = 0; e < dim; ++e)
            exact.embeddings.push_back(ctr[std::size_t(e)] + 0.3f * float(rng.gaussian()));
    }
    auto ivf = to_ivf(exact, IvfParams{16, 6, 10}, 17);
    std::vector<std::vector<float>> probes;
    for (int i = 0; i < 50; ++i) {
        const auto& ctr = centers[rng.below(std::uint64_t(n_centers))];
        auto p = ctr;
        for (auto& v : p) v += 0.3f * float(rng.gaussian());
        probes.push_back(std::move(p));
    }
    double recall = knn_recall(ivf, exact, probes, 10);
    CHECK(recall >= 0.9);
    CHECK(recall <= 1.0);

    auto other = exact;
    other.model_fingerprint = 43;
    CHECK_THROWS_AS(knn_recall(ivf, other, probes, 10), ConfigError);
    CHECK(knn_recall(exact, exact, probes, 10) == 1.0);
}

TEST_CASE("build_index ties the index to the model fingerprint") {
    EncoderConfig cfg;
    cfg.vocab_hash_size = 64;
    cfg.embed_dim = 8;
    cfg.hidden_dim = 8;
    cfg.out_dim = 8;
    auto model = init_model(cfg, 21);
    std::vector<Document> corpus{{"d1", "alpha beta", ""}, {"d2", "gamma", ""}, {"d3", "beta", ""}};
    auto index = build_index(model, corpus);
    CHECK(index.model_fingerprint == model_fingerprint(model));
    CHECK(index.size() == 3);
    CHECK(index.dim == 8);
    // row i must equal encode(doc i)
    auto v = encode(model, hash_tokens("gamma", cfg.vocab_hash_size));
    for (int e = 0; e < 8; ++e) CHECK(index.embeddings[std::size_t(index.dim) + std::size_t(e)] == v[std::size_t(e)]);
    CHECK_THROWS_AS(build_index(model, {}), DataError);
}

TEST_CASE("dense index round-trips through its file format") {
    Rng rng(10);
    auto exact = random_index(rng, 60, 5);
    auto ivf = to_ivf(exact, IvfParams{8, 3, 5}, 2);
    for (const auto* src : {&exact, &ivf}) {
        auto path = temp_path("idx.bin");
        save_index(*src, path);
        auto loaded = load_index(path);
        fs::remove(path);
        CHECK(loaded.model_fingerprint == src->model_fingerprint);
        CHECK(loaded.dim == src->dim);
        REQUIRE(loaded.size() == src->size());
        auto probe = random_probe(rng, 5);
        auto a = topk(*src, probe, 10);
        auto b = topk(loaded, probe, 10);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i].first == b[i].first);
            CHECK(a[i].second == b[i].second);
        }
    }
}

TEST_CASE("loading a non-index file fails cleanly") {
    auto path = temp_path("junk.bin");
    {
        std::ofstream out(path, std::ios::binary);
        out << "not an index";
    }
    CHECK_THROWS_AS(load_index(path), FormatError);
    fs::remove(path);
}
