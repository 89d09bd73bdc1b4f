#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "g2l/data.hpp"
#include "g2l/errors.hpp"

using namespace g2l;
namespace fs = std::filesystem;

namespace {

DatasetSpec tiny_spec() {
    DatasetSpec s;
    s.n_samples = 20;
    s.frames = 6;
    s.frame_dim = s.clip_dim = s.region_dim = 8;
    s.regions_per_frame = 3;
    s.n_subjects = s.n_actions = s.n_objects = 4;
    s.n_signal_frames = 1;
    s.seed = 42;
    return s;
}

std::string file_bytes(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("zero noise plants the object prototype exactly") {
    auto spec = tiny_spec();
    spec.noise_std = 0.0;
    auto ds = generate_dataset(spec);
    auto bank = ConceptBank::build(spec);
    for (const auto& s : ds.samples) {
        REQUIRE(s.planted_frames.size() == 1);
        int rf = s.planted_frames[0];
        int r = s.planted_regions[0];
        for (int d = 0; d < spec.region_dim; ++d) {
            double got = s.region_feats[static_cast<size_t>(
                (rf * spec.regions_per_frame + r) * spec.region_dim + d)];
            CHECK(got == bank.objects[static_cast<size_t>(s.object)][static_cast<size_t>(d)]);
        }
    }
}

TEST_CASE("same seed produces byte-identical dataset files") {
    auto spec = tiny_spec();
    auto ds1 = generate_dataset(spec);
    auto ds2 = generate_dataset(spec);
    fs::path dir = fs::temp_directory_path() / "g2l_data_test";
    fs::create_directories(dir);
    save_dataset((dir / "a.g2ld").string(), ds1);
    save_dataset((dir / "b.g2ld").string(), ds2);
    CHECK(file_bytes((dir / "a.g2ld").string()) == file_bytes((dir / "b.g2ld").string()));
}

TEST_CASE("split ratios give exact disjoint contiguous partitions") {
    auto spec = tiny_spec();
    spec.n_samples = 100;
    spec.train_ratio = 0.8;
    spec.val_ratio = 0.1;
    spec.test_ratio = 0.1;
    auto ds = generate_dataset(spec);
    Dataset train, val, test;
    split_dataset(ds, train, val, test);
    CHECK(train.samples.size() == 80);
    CHECK(val.samples.size() == 10);
    CHECK(test.samples.size() == 10);
}

TEST_CASE("save/load round-trips every field bit-exactly") {
    auto spec = tiny_spec();
    auto ds = generate_dataset(spec);
    fs::path path = fs::temp_directory_path() / "g2l_data_test" / "rt.g2ld";
    fs::create_directories(path.parent_path());
    save_dataset(path.string(), ds);
    auto back = load_dataset(path.string());
    REQUIRE(back.samples.size() == ds.samples.size());
    CHECK(back.spec.seed == spec.seed);
    CHECK(back.spec.noise_std == spec.noise_std);
    for (size_t i = 0; i < ds.samples.size(); ++i) {
        const auto& a = ds.samples[i];
        const auto& b = back.samples[i];
        CHECK(a.frame_feats == b.frame_feats);
        CHECK(a.clip_feats == b.clip_feats);
        CHECK(a.region_feats == b.region_feats);
        CHECK(a.caption == b.caption);
        CHECK(a.planted_frames == b.planted_frames);
        CHECK(a.planted_regions == b.planted_regions);
        CHECK(a.subject == b.subject);
        CHECK(a.action == b.action);
        CHECK(a.object == b.object);
    }
}

TEST_CASE("truncated dataset file raises a parse error with a byte offset") {
    auto spec = tiny_spec();
    auto ds = generate_dataset(spec);
    fs::path dir = fs::temp_directory_path() / "g2l_data_test";
    fs::create_directories(dir);
    auto full = (dir / "full.g2ld").string();
    save_dataset(full, ds);
    auto bytes = file_bytes(full);
    auto cut = (dir / "cut.g2ld").string();
    std::ofstream(cut, std::ios::binary).write(bytes.data(), static_cast<long>(bytes.size() / 2));
    CHECK_THROWS_WITH_AS(load_dataset(cut), doctest::Contains("byte"), ParseError);
}

TEST_CASE("corrupt magic is rejected") {
    fs::path dir = fs::temp_directory_path() / "g2l_data_test";
    fs::create_directories(dir);
    auto bad = (dir / "bad.g2ld").string();
    std::ofstream(bad, std::ios::binary) << "NOPE-----------------";
    CHECK_THROWS_AS(load_dataset(bad), ParseError);
}

TEST_CASE("empty dataset round-trips") {
    auto spec = tiny_spec();
    spec.n_samples = 0;
    auto ds = generate_dataset(spec);
    fs::path path = fs::temp_directory_path() / "g2l_data_test" / "empty.g2ld";
    fs::create_directories(path.parent_path());
    save_dataset(path.string(), ds);
    auto back = load_dataset(path.string());
    CHECK(back.samples.empty());
}

TEST_CASE("nearest-prototype recovery on planted regions") {
    auto spec = tiny_spec();
    spec.n_samples = 300;
    spec.noise_std = 0.1;
    auto ds = generate_dataset(spec);
    auto bank = ConceptBank::build(spec);
    int hit = 0;
    for (const auto& s : ds.samples) {
        int rf = s.planted_frames[0];
        int r = s.planted_regions[0];
        const double* vec = s.region_feats.data() +
                            static_cast<size_t>((rf * spec.regions_per_frame + r) * spec.region_dim);
        int best = -1;
        double best_d = 1e300;
        for (int o = 0; o < spec.n_objects; ++o) {
            double d = 0.0;
            for (int k = 0; k < spec.region_dim; ++k) {
                double diff = vec[k] - bank.objects[static_cast<size_t>(o)][static_cast<size_t>(k)];
                d += diff * diff;
            }
            if (d < best_d) {
                best_d = d;
                best = o;
            }
        }
        if (best == s.object) ++hit;
    }
    CHECK(static_cast<double>(hit) / static_cast<double>(ds.samples.size()) > 0.99);
}

TEST_CASE("captions follow the five-token template") {
    auto spec = tiny_spec();
    auto ds = generate_dataset(spec);
    auto vocab = build_vocabulary(spec);
    for (const auto& s : ds.samples) {
        REQUIRE(s.caption.size() == 5);
        CHECK(s.caption.front() == Vocabulary::kBos);
        CHECK(s.caption.back() == Vocabulary::kEos);
        CHECK(s.caption[1] == vocab.lookup("s" + std::to_string(s.subject)));
        CHECK(s.caption[2] == vocab.lookup("a" + std::to_string(s.action)));
        CHECK(s.caption[3] == vocab.lookup("o" + std::to_string(s.object)));
    }
}

TEST_CASE("concept frequencies stay within three sigma of uniform") {
    auto spec = tiny_spec();
    spec.n_samples = 1200;
    auto ds = generate_dataset(spec);
    auto check_counts = [&](auto pick, int classes) {
        std::vector<int> counts(static_cast<size_t>(classes), 0);
        for (const auto& s : ds.samples) ++counts[static_cast<size_t>(pick(s))];
        double p = 1.0 / classes;
        double expect = spec.n_samples * p;
        double sigma = std::sqrt(spec.n_samples * p * (1 - p));
        for (int c : counts) CHECK(std::fabs(c - expect) <= 3.0 * sigma);
    };
    check_counts([](const VideoSample& s) { return s.subject; }, spec.n_subjects);
    check_counts([](const VideoSample& s) { return s.action; }, spec.n_actions);
    check_counts([](const VideoSample& s) { return s.object; }, spec.n_objects);
}

TEST_CASE("planted frames are valid distinct region-frames") {
    auto spec = tiny_spec();
    spec.n_signal_frames = 2;
    spec.n_samples = 200;
    auto ds = generate_dataset(spec);
    for (const auto& s : ds.samples) {
        std::set<int> uniq(s.planted_frames.begin(), s.planted_frames.end());
        CHECK(uniq.size() == s.planted_frames.size());
        for (int f : s.planted_frames) {
            CHECK(f >= 0);
            CHECK(f < spec.region_frames());
        }
    }
}

TEST_CASE("invalid specs are rejected") {
    auto spec = tiny_spec();
    spec.frames = 7;  // not divisible by stride
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec = tiny_spec();
    spec.n_signal_frames = 10;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec = tiny_spec();
    spec.noise_std = -1;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec = tiny_spec();
    spec.n_subjects = 100000;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec = tiny_spec();
    spec.train_ratio = 0.5;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
}

TEST_CASE("vocabulary reserves the control tokens and round-trips") {
    auto spec = tiny_spec();
    auto vocab = build_vocabulary(spec);
    CHECK(vocab.tokens[0] == "<pad>");
    CHECK(vocab.tokens[1] == "<bos>");
    CHECK(vocab.tokens[2] == "<eos>");
    CHECK(vocab.tokens[3] == "<unk>");
    CHECK(vocab.size() == 4 + 12);
    CHECK(vocab.lookup("nonexistent") == Vocabulary::kUnk);
    fs::path path = fs::temp_directory_path() / "g2l_data_test" / "vocab.json";
    fs::create_directories(path.parent_path());
    vocab.save(path.string());
    auto back = Vocabulary::load(path.string());
    CHECK(back.tokens == vocab.tokens);
}
