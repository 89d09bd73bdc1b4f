#include "g2l/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "g2l/errors.hpp"
#include "g2l/tensor.hpp"

namespace g2l {

namespace {

// Substream tags under the dataset seed.
constexpr uint64_t kPrototypeStream = 0;
constexpr uint64_t kSampleStream = 1;

constexpr char kMagic[4] = {'G', '2', 'L', 'D'};
constexpr uint16_t kFormatVersion = 1;

// Object assignment cycles through [0..n-1] r times plus one extra slot for
// object 0. r is the smallest repeat count keeping the deviation of object
// 0's frequency from uniform at or below ~2.5 sigma for this sample count,
// so the class balance envelope holds by construction while the most
// frequent object has a deterministic margin.
int scheduled_object(const DatasetSpec& spec, int sample_index) {
    int n = spec.n_objects;
    if (n == 1) return 0;
    // deviation z = sqrt(N(n-1)) / (rn+1); keep it at or below 2.5
    double target = std::sqrt(static_cast<double>(spec.n_samples) * (n - 1)) / 2.5;
    int reps = 1;
    while (reps * n + 1 < target) ++reps;
    int cycle = reps * n + 1;
    int pos = sample_index % cycle;
    return pos == reps * n ? 0 : pos % n;
}

std::vector<double> unit_prototype(int dim, Rng& rng) {
    auto v = rng.normal_vec(static_cast<size_t>(dim));
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
    return v;
}

}  // namespace

Vocabulary Vocabulary::reserved_only() {
    Vocabulary v;
    v.tokens = {"<pad>", "<bos>", "<eos>", "<unk>"};
    for (int i = 0; i < 4; ++i) v.index[v.tokens[static_cast<size_t>(i)]] = i;
    return v;
}

int Vocabulary::add(const std::string& token) {
    auto it = index.find(token);
    if (it != index.end()) return it->second;
    int id = size();
    tokens.push_back(token);
    index[token] = id;
    return id;
}

int Vocabulary::lookup(const std::string& token) const {
    auto it = index.find(token);
    return it == index.end() ? kUnk : it->second;
}

void Vocabulary::save(const std::string& path) const {
    nlohmann::json j;
    j["tokens"] = tokens;
    std::ofstream os(path);
    if (!os) throw ParseError("cannot open " + path + " for writing");
    os << j.dump(2) << "\n";
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ParseError("cannot open " + path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("bad vocabulary file " + path + ": " + e.what());
    }
    Vocabulary v;
    v.tokens = j.at("tokens").get<std::vector<std::string>>();
    if (v.tokens.size() < 4) throw ParseError("vocabulary missing reserved tokens");
    for (int i = 0; i < v.size(); ++i) v.index[v.tokens[static_cast<size_t>(i)]] = i;
    return v;
}

void DatasetSpec::validate() const {
    if (n_samples < 0) throw ConfigError("dataset: n_samples must be >= 0");
    if (frames < 1 || sparse_stride < 1) throw ConfigError("dataset: frames and stride must be >= 1");
    if (frames % sparse_stride != 0)
        throw ConfigError("dataset: frames (" + std::to_string(frames) +
                          ") not divisible by sparse_stride (" + std::to_string(sparse_stride) + ")");
    if (frame_dim < 1 || clip_dim < 1 || region_dim < 1 || regions_per_frame < 1)
        throw ConfigError("dataset: feature dims must be positive");
    if (n_subjects < 1 || n_actions < 1 || n_objects < 1 || n_distractors < 1)
        throw ConfigError("dataset: concept counts must be positive");
    if (n_subjects + n_actions + n_objects > 60000)
        throw ConfigError("dataset: concept counts exceed vocabulary capacity");
    if (noise_std < 0.0) throw ConfigError("dataset: noise_std must be >= 0");
    if (n_signal_frames < 1 || n_signal_frames > region_frames())
        throw ConfigError("dataset: n_signal_frames must be in [1, frames/stride]");
    double total = train_ratio + val_ratio + test_ratio;
    if (train_ratio < 0 || val_ratio < 0 || test_ratio < 0 || std::fabs(total - 1.0) > 1e-9)
        throw ConfigError("dataset: split ratios must be nonnegative and sum to 1");
}

ConceptBank ConceptBank::build(const DatasetSpec& spec) {
    Rng rng = Rng::stream(spec.seed, kPrototypeStream);
    ConceptBank bank;
    for (int i = 0; i < spec.n_subjects; ++i) bank.subjects.push_back(unit_prototype(spec.frame_dim, rng));
    for (int i = 0; i < spec.n_actions; ++i) bank.actions.push_back(unit_prototype(spec.clip_dim, rng));
    for (int i = 0; i < spec.n_objects; ++i) bank.objects.push_back(unit_prototype(spec.region_dim, rng));
    for (int i = 0; i < spec.n_distractors; ++i)
        bank.distractors.push_back(unit_prototype(spec.region_dim, rng));
    return bank;
}

Vocabulary build_vocabulary(const DatasetSpec& spec) {
    spec.validate();
    Vocabulary v = Vocabulary::reserved_only();
    for (int i = 0; i < spec.n_subjects; ++i) v.add("s" + std::to_string(i));
    for (int i = 0; i < spec.n_actions; ++i) v.add("a" + std::to_string(i));
    for (int i = 0; i < spec.n_objects; ++i) v.add("o" + std::to_string(i));
    return v;
}

Dataset generate_dataset(const DatasetSpec& spec) {
    spec.validate();
    ConceptBank bank = ConceptBank::build(spec);
    Vocabulary vocab = build_vocabulary(spec);

    Dataset ds;
    ds.spec = spec;
    ds.samples.reserve(static_cast<size_t>(spec.n_samples));
    int n_rf = spec.region_frames();

    for (int s = 0; s < spec.n_samples; ++s) {
        Rng rng = Rng::stream(spec.seed, kSampleStream, static_cast<uint64_t>(s));
        VideoSample sample;
        sample.subject = rng.uniform_int(spec.n_subjects);
        sample.action = rng.uniform_int(spec.n_actions);
        sample.object = scheduled_object(spec, s);

        // Planted region-frame positions: seeded partial Fisher-Yates.
        std::vector<int> order(static_cast<size_t>(n_rf));
        for (int i = 0; i < n_rf; ++i) order[static_cast<size_t>(i)] = i;
        for (int i = 0; i < spec.n_signal_frames; ++i) {
            int j = i + rng.uniform_int(n_rf - i);
            std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
        }
        sample.planted_frames.assign(order.begin(), order.begin() + spec.n_signal_frames);
        std::sort(sample.planted_frames.begin(), sample.planted_frames.end());
        for (size_t i = 0; i < sample.planted_frames.size(); ++i)
            sample.planted_regions.push_back(rng.uniform_int(spec.regions_per_frame));

        auto planted_rf = [&](int rf) {
            return std::find(sample.planted_frames.begin(), sample.planted_frames.end(), rf) !=
                   sample.planted_frames.end();
        };
        auto planted_region_of = [&](int rf) {
            for (size_t i = 0; i < sample.planted_frames.size(); ++i)
                if (sample.planted_frames[i] == rf) return sample.planted_regions[i];
            return -1;
        };

        sample.clip_feats.resize(static_cast<size_t>(spec.frames * spec.clip_dim));
        for (int f = 0; f < spec.frames; ++f)
            for (int d = 0; d < spec.clip_dim; ++d)
                sample.clip_feats[static_cast<size_t>(f * spec.clip_dim + d)] =
                    bank.actions[static_cast<size_t>(sample.action)][static_cast<size_t>(d)] +
                    spec.noise_std * rng.normal();

        sample.frame_feats.resize(static_cast<size_t>(spec.frames * spec.frame_dim));
        for (int f = 0; f < spec.frames; ++f) {
            bool signal = planted_rf(f / spec.sparse_stride);
            for (int d = 0; d < spec.frame_dim; ++d) {
                double base = signal
                                  ? bank.subjects[static_cast<size_t>(sample.subject)]
                                                 [static_cast<size_t>(d)]
                                  : 0.0;
                sample.frame_feats[static_cast<size_t>(f * spec.frame_dim + d)] =
                    base + spec.noise_std * rng.normal();
            }
        }

        sample.region_feats.resize(
            static_cast<size_t>(n_rf * spec.regions_per_frame * spec.region_dim));
        for (int rf = 0; rf < n_rf; ++rf) {
            int key_region = planted_rf(rf) ? planted_region_of(rf) : -1;
            for (int r = 0; r < spec.regions_per_frame; ++r) {
                const std::vector<double>* proto;
                if (r == key_region) {
                    proto = &bank.objects[static_cast<size_t>(sample.object)];
                } else {
                    proto = &bank.distractors[static_cast<size_t>(rng.uniform_int(spec.n_distractors))];
                }
                for (int d = 0; d < spec.region_dim; ++d)
                    sample.region_feats[static_cast<size_t>(
                        (rf * spec.regions_per_frame + r) * spec.region_dim + d)] =
                        (*proto)[static_cast<size_t>(d)] + spec.noise_std * rng.normal();
            }
        }

        sample.caption = {Vocabulary::kBos, vocab.lookup("s" + std::to_string(sample.subject)),
                          vocab.lookup("a" + std::to_string(sample.action)),
                          vocab.lookup("o" + std::to_string(sample.object)), Vocabulary::kEos};
        ds.samples.push_back(std::move(sample));
    }
    return ds;
}

void split_dataset(const Dataset& all, Dataset& train, Dataset& val, Dataset& test) {
    int n = static_cast<int>(all.samples.size());
    int n_val = static_cast<int>(std::lround(all.spec.val_ratio * n));
    int n_test = static_cast<int>(std::lround(all.spec.test_ratio * n));
    int n_train = n - n_val - n_test;
    if (n_train < 0) throw ConfigError("split: ratios leave no training samples");
    train.spec = val.spec = test.spec = all.spec;
    train.samples.assign(all.samples.begin(), all.samples.begin() + n_train);
    val.samples.assign(all.samples.begin() + n_train, all.samples.begin() + n_train + n_val);
    test.samples.assign(all.samples.begin() + n_train + n_val, all.samples.end());
}

namespace {

class CountingReader {
  public:
    explicit CountingReader(std::istream& is) : is_(is) {}
    uint16_t u16() { return take<uint16_t>(read_u16); }
    uint32_t u32() { return take<uint32_t>(read_u32); }
    uint64_t u64() { return take<uint64_t>(read_u64); }
    double f64() { return take<double>(read_f64); }
    void bytes(char* dst, size_t n) {
        is_.read(dst, static_cast<std::streamsize>(n));
        if (static_cast<size_t>(is_.gcount()) != n)
            throw ParseError("dataset file truncated at byte " + std::to_string(offset_));
        offset_ += n;
    }
    size_t offset() const { return offset_; }

  private:
    template <typename T, typename F>
    T take(F f) {
        try {
            T v = f(is_);
            offset_ += sizeof(T);
            return v;
        } catch (const ParseError&) {
            throw ParseError("dataset file truncated at byte " + std::to_string(offset_));
        }
    }
    std::istream& is_;
    size_t offset_ = 0;
};

void write_spec(std::ostream& os, const DatasetSpec& s) {
    write_u32(os, static_cast<uint32_t>(s.n_samples));
    write_u32(os, static_cast<uint32_t>(s.frames));
    write_u32(os, static_cast<uint32_t>(s.frame_dim));
    write_u32(os, static_cast<uint32_t>(s.clip_dim));
    write_u32(os, static_cast<uint32_t>(s.region_dim));
    write_u32(os, static_cast<uint32_t>(s.regions_per_frame));
    write_u32(os, static_cast<uint32_t>(s.sparse_stride));
    write_u32(os, static_cast<uint32_t>(s.n_subjects));
    write_u32(os, static_cast<uint32_t>(s.n_actions));
    write_u32(os, static_cast<uint32_t>(s.n_objects));
    write_u32(os, static_cast<uint32_t>(s.n_distractors));
    write_f64(os, s.noise_std);
    write_u32(os, static_cast<uint32_t>(s.n_signal_frames));
    write_u64(os, s.seed);
    write_f64(os, s.train_ratio);
    write_f64(os, s.val_ratio);
    write_f64(os, s.test_ratio);
}

DatasetSpec read_spec(CountingReader& r) {
    DatasetSpec s;
    s.n_samples = static_cast<int>(r.u32());
    s.frames = static_cast<int>(r.u32());
    s.frame_dim = static_cast<int>(r.u32());
    s.clip_dim = static_cast<int>(r.u32());
    s.region_dim = static_cast<int>(r.u32());
    s.regions_per_frame = static_cast<int>(r.u32());
    s.sparse_stride = static_cast<int>(r.u32());
    s.n_subjects = static_cast<int>(r.u32());
    s.n_actions = static_cast<int>(r.u32());
    s.n_objects = static_cast<int>(r.u32());
    s.n_distractors = static_cast<int>(r.u32());
    s.noise_std = r.f64();
    s.n_signal_frames = static_cast<int>(r.u32());
    s.seed = r.u64();
    s.train_ratio = r.f64();
    s.val_ratio = r.f64();
    s.test_ratio = r.f64();
    return s;
}

}  // namespace

void save_dataset(const std::string& path, const Dataset& ds) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ParseError("cannot open " + path + " for writing");
    os.write(kMagic, 4);
    write_u16(os, kFormatVersion);
    write_spec(os, ds.spec);
    write_u32(os, static_cast<uint32_t>(ds.samples.size()));
    for (const auto& s : ds.samples) {
        // Length-prefixed record so a reader can skip or bound-check.
        std::ostringstream rec(std::ios::binary);
        write_u32(rec, static_cast<uint32_t>(s.subject));
        write_u32(rec, static_cast<uint32_t>(s.action));
        write_u32(rec, static_cast<uint32_t>(s.object));
        write_u32(rec, static_cast<uint32_t>(s.caption.size()));
        for (int t : s.caption) write_u32(rec, static_cast<uint32_t>(t));
        write_u32(rec, static_cast<uint32_t>(s.planted_frames.size()));
        for (int f : s.planted_frames) write_u32(rec, static_cast<uint32_t>(f));
        for (int ridx : s.planted_regions) write_u32(rec, static_cast<uint32_t>(ridx));
        write_u32(rec, static_cast<uint32_t>(s.frame_feats.size()));
        for (double v : s.frame_feats) write_f64(rec, v);
        write_u32(rec, static_cast<uint32_t>(s.clip_feats.size()));
        for (double v : s.clip_feats) write_f64(rec, v);
        write_u32(rec, static_cast<uint32_t>(s.region_feats.size()));
        for (double v : s.region_feats) write_f64(rec, v);
        std::string bytes = rec.str();
        write_u32(os, static_cast<uint32_t>(bytes.size()));
        os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    if (!os) throw ParseError("write failure on " + path);
}

Dataset load_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ParseError("cannot open " + path);
    CountingReader r(is);
    char magic[4];
    r.bytes(magic, 4);
    if (std::string(magic, 4) != std::string(kMagic, 4))
        throw ParseError(path + ": bad magic bytes at byte 0");
    uint16_t version = r.u16();
    if (version != kFormatVersion)
        throw ParseError(path + ": unsupported format version " + std::to_string(version));
    Dataset ds;
    ds.spec = read_spec(r);
    uint32_t count = r.u32();
    ds.samples.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        uint32_t rec_len = r.u32();
        size_t rec_start = r.offset();
        VideoSample s;
        s.subject = static_cast<int>(r.u32());
        s.action = static_cast<int>(r.u32());
        s.object = static_cast<int>(r.u32());
        uint32_t cap_len = r.u32();
        s.caption.resize(cap_len);
        for (auto& t : s.caption) t = static_cast<int>(r.u32());
        uint32_t n_planted = r.u32();
        s.planted_frames.resize(n_planted);
        for (auto& f : s.planted_frames) f = static_cast<int>(r.u32());
        s.planted_regions.resize(n_planted);
        for (auto& ridx : s.planted_regions) ridx = static_cast<int>(r.u32());
        auto read_block = [&](std::vector<double>& out) {
            uint32_t n = r.u32();
            out.resize(n);
            for (auto& v : out) v = r.f64();
        };
        read_block(s.frame_feats);
        read_block(s.clip_feats);
        read_block(s.region_feats);
        if (r.offset() - rec_start != rec_len)
            throw ParseError(path + ": record " + std::to_string(i) + " length mismatch at byte " +
                             std::to_string(r.offset()));
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

}  // namespace g2l
