#include "mvcl/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "mvcl/errors.hpp"
#include "mvcl/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "dataset files are little-endian; big-endian hosts are unsupported");

namespace mvcl::data {

namespace {

constexpr char kMagic[4] = {'M', 'V', 'D', 'S'};
constexpr std::uint32_t kVersion = 1;

void write_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
void write_f64(std::ostream& os, double v) { os.write(reinterpret_cast<const char*>(&v), 8); }

std::uint64_t read_u64(std::istream& is) {
    std::uint64_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), 8)) throw FormatError("dataset file truncated");
    return v;
}

double read_f64(std::istream& is) {
    double v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), 8)) throw FormatError("dataset file truncated");
    return v;
}

void write_i64_vec(std::ostream& os, const std::vector<std::int64_t>& v) {
    write_u64(os, v.size());
    os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * 8));
}

std::vector<std::int64_t> read_i64_vec(std::istream& is) {
    std::vector<std::int64_t> v(read_u64(is));
    if (!is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * 8))) {
        throw FormatError("dataset file truncated");
    }
    return v;
}

void write_tensor(std::ostream& os, const Tensor& t) {
    write_u64(os, t.rank());
    for (auto d : t.shape()) write_u64(os, d);
    os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * 8));
}

Tensor read_tensor(std::istream& is) {
    Shape shape(read_u64(is));
    if (shape.size() > 8) throw FormatError("dataset file corrupt: implausible tensor rank");
    for (auto& d : shape) d = read_u64(is);
    if (shape.empty()) return Tensor();
    Tensor t(shape);
    if (!is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * 8))) {
        throw FormatError("dataset file truncated");
    }
    return t;
}

void write_split(std::ostream& os, const Split& s) {
    write_u64(os, s.size());
    if (s.size() == 0) return;
    write_i64_vec(os, s.text);
    write_i64_vec(os, s.text_len);
    write_tensor(os, s.visual);
    write_tensor(os, s.acoustic);
    write_i64_vec(os, s.kv_len);
    write_i64_vec(os, s.labels);
}

Split read_split(std::istream& is) {
    Split s;
    if (read_u64(is) == 0) return s;
    s.text = read_i64_vec(is);
    s.text_len = read_i64_vec(is);
    s.visual = read_tensor(is);
    s.acoustic = read_tensor(is);
    s.kv_len = read_i64_vec(is);
    s.labels = read_i64_vec(is);
    return s;
}

std::vector<Tensor> class_anchors(const DatasetSpec& spec, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<Tensor> anchors;
    anchors.reserve(spec.num_classes);
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
        Tensor a({spec.latent_dim});
        double norm2 = 0;
        do {
            for (auto& v : a.values()) v = normal(rng);
            norm2 = 0;
            for (auto v : a.values()) norm2 += v * v;
        } while (norm2 < 1e-12);
        const double inv = 1.0 / std::sqrt(norm2);
        for (auto& v : a.values()) v *= inv;
        anchors.push_back(std::move(a));
    }
    return anchors;
}

Tensor random_projection(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Tensor p({rows, cols});
    const double scale = 1.0 / std::sqrt(static_cast<double>(cols));
    for (auto& v : p.values()) v = normal(rng) * scale;
    return p;
}

Split generate_split(const DatasetSpec& spec, std::size_t n, const std::string& name,
                     const std::vector<Tensor>& anchors, const Tensor& proj_v,
                     const Tensor& proj_a,
                     const std::vector<std::vector<std::int64_t>>& class_tokens,
                     const SplitRng& rng_root) {
    const std::size_t C = spec.num_classes;
    if (n < C) {
        throw ConfigError("split '" + name + "' of size " + std::to_string(n) +
                          " cannot be label-stratified over " + std::to_string(C) + " classes");
    }
    auto counts = quota_counts(n, zipf_probs(C, spec.zipf_s));
    // stratification floor: every class appears at least once
    for (std::size_t c = 0; c < C; ++c) {
        while (counts[c] == 0) {
            auto mx = std::max_element(counts.begin(), counts.end());
            --*mx;
            ++counts[c];
        }
    }

    std::vector<std::int64_t> labels;
    labels.reserve(n);
    for (std::size_t c = 0; c < C; ++c) {
        labels.insert(labels.end(), counts[c], static_cast<std::int64_t>(c));
    }
    auto shuffle_rng = rng_root.stream("shuffle/" + name);
    std::shuffle(labels.begin(), labels.end(), shuffle_rng);

    auto rng = rng_root.stream("features/" + name);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    Split s;
    s.labels = std::move(labels);
    s.text.assign(n * spec.text_len, kPadToken);
    s.text_len.resize(n);
    s.kv_len.resize(n);
    s.visual = Tensor({n, spec.kv_len, spec.d_v});
    s.acoustic = Tensor({n, spec.kv_len, spec.d_a});

    const std::size_t min_text = std::max<std::size_t>(1, spec.text_len > 4 ? spec.text_len - 4 : 1);
    const std::size_t min_kv = std::max<std::size_t>(1, spec.kv_len > 2 ? spec.kv_len - 2 : 1);
    std::uniform_int_distribution<std::size_t> text_len_dist(min_text, spec.text_len);
    std::uniform_int_distribution<std::size_t> kv_len_dist(min_kv, spec.kv_len);
    std::uniform_int_distribution<std::int64_t> any_token(
        kFirstRealToken, static_cast<std::int64_t>(spec.vocab_size) - 1);

    std::vector<double> latent(spec.latent_dim);
    for (std::size_t i = 0; i < n; ++i) {
        const auto c = static_cast<std::size_t>(s.labels[i]);
        const auto& toks = class_tokens[c];
        std::uniform_int_distribution<std::size_t> pick(0, toks.size() - 1);

        // One latent per instance, shared by all three modalities: the
        // class anchor plus isotropic scatter. This is the cross-modal
        // signal instance-level alignment can recover.
        const Tensor& anchor = anchors[c];
        for (std::size_t z = 0; z < spec.latent_dim; ++z) {
            latent[z] = anchor[z] + spec.instance_spread * normal(rng);
        }
        // The latent octant keys a preferred "core" token within the
        // class pool, so text reflects the same latent.
        std::size_t core = 0;
        for (std::size_t b = 0; b < 3 && b < spec.latent_dim; ++b) {
            if (latent[b] > anchor[b]) core |= (1u << b);
        }
        core %= toks.size();

        const std::size_t lt = text_len_dist(rng);
        s.text_len[i] = static_cast<std::int64_t>(lt);
        for (std::size_t t = 0; t < lt; ++t) {
            const bool off_class = unif(rng) < spec.text_noise;
            if (off_class) {
                s.text[i * spec.text_len + t] = any_token(rng);
            } else {
                s.text[i * spec.text_len + t] = unif(rng) < 0.5 ? toks[core] : toks[pick(rng)];
            }
        }

        const std::size_t lkv = kv_len_dist(rng);
        s.kv_len[i] = static_cast<std::int64_t>(lkv);
        for (std::size_t t = 0; t < lkv; ++t) {
            for (std::size_t j = 0; j < spec.d_v; ++j) {
                double base = 0;
                for (std::size_t z = 0; z < spec.latent_dim; ++z) {
                    base += proj_v.at(j, z) * latent[z];
                }
                s.visual.at(i, t, j) = base + spec.visual_noise * normal(rng);
            }
            for (std::size_t j = 0; j < spec.d_a; ++j) {
                double base = 0;
                for (std::size_t z = 0; z < spec.latent_dim; ++z) {
                    base += proj_a.at(j, z) * latent[z];
                }
                s.acoustic.at(i, t, j) = base + spec.acoustic_noise * normal(rng);
            }
        }
    }
    return s;
}

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

void DatasetSpec::validate() const {
    if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
    if (train_size == 0 || val_size == 0 || test_size == 0) {
        throw ConfigError("all split sizes must be positive");
    }
    if (zipf_s < 0) throw ConfigError("zipf_s must be >= 0");
    if (visual_noise < 0 || acoustic_noise < 0 || text_noise < 0 || text_noise > 1 ||
        instance_spread < 0) {
        throw ConfigError("noise parameters out of range");
    }
    if (vocab_size < static_cast<std::size_t>(kFirstRealToken) + num_classes) {
        throw ConfigError("vocab_size too small for class-conditioned tokens");
    }
    if (text_len == 0 || kv_len == 0 || d_v == 0 || d_a == 0 || latent_dim == 0) {
        throw ConfigError("sequence lengths and dims must be positive");
    }
}

std::vector<double> zipf_probs(std::size_t num_classes, double s) {
    std::vector<double> p(num_classes);
    double z = 0;
    for (std::size_t c = 0; c < num_classes; ++c) {
        p[c] = 1.0 / std::pow(static_cast<double>(c + 1), s);
        z += p[c];
    }
    for (auto& v : p) v /= z;
    return p;
}

std::vector<std::size_t> quota_counts(std::size_t n, const std::vector<double>& probs) {
    const std::size_t C = probs.size();
    std::vector<std::size_t> counts(C);
    std::vector<std::pair<double, std::size_t>> remainder(C);
    std::size_t assigned = 0;
    for (std::size_t c = 0; c < C; ++c) {
        double exact = probs[c] * static_cast<double>(n);
        counts[c] = static_cast<std::size_t>(exact);
        remainder[c] = {exact - std::floor(exact), c};
        assigned += counts[c];
    }
    std::sort(remainder.begin(), remainder.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++counts[remainder[i % C].second];
    return counts;
}

Dataset generate(const DatasetSpec& spec) {
    spec.validate();
    SplitRng root(spec.seed);

    auto anchor_rng = root.stream("anchors");
    auto anchors = class_anchors(spec, anchor_rng);
    auto proj_rng = root.stream("projections");
    Tensor proj_v = random_projection(spec.d_v, spec.latent_dim, proj_rng);
    Tensor proj_a = random_projection(spec.d_a, spec.latent_dim, proj_rng);

    // Disjoint preferred-token pools keep classes separable in text when
    // the vocabulary permits; otherwise pools are drawn independently.
    auto tok_rng = root.stream("class_tokens");
    const std::size_t usable = spec.vocab_size - static_cast<std::size_t>(kFirstRealToken);
    const std::size_t pool = std::min<std::size_t>(8, std::max<std::size_t>(1, usable / spec.num_classes));
    std::vector<std::int64_t> all_tokens(usable);
    std::iota(all_tokens.begin(), all_tokens.end(), kFirstRealToken);
    std::shuffle(all_tokens.begin(), all_tokens.end(), tok_rng);
    std::vector<std::vector<std::int64_t>> class_tokens(spec.num_classes);
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
        for (std::size_t k = 0; k < pool; ++k) {
            class_tokens[c].push_back(all_tokens[(c * pool + k) % usable]);
        }
    }

    Dataset ds;
    ds.spec = spec;
    ds.train = generate_split(spec, spec.train_size, "train", anchors, proj_v, proj_a, class_tokens, root);
    ds.val = generate_split(spec, spec.val_size, "val", anchors, proj_v, proj_a, class_tokens, root);
    ds.test = generate_split(spec, spec.test_size, "test", anchors, proj_v, proj_a, class_tokens, root);
    return ds;
}

MultimodalBatch make_batch(const Split& split, const DatasetSpec& spec,
                           const std::vector<std::size_t>& indices) {
    MultimodalBatch b;
    b.batch = indices.size();
    b.text_len = spec.text_len;
    b.kv_len = spec.kv_len;
    b.d_v = spec.d_v;
    b.d_a = spec.d_a;
    b.text.assign(b.batch * spec.text_len, kPadToken);
    b.text_mask.assign(b.batch * spec.text_len, 0);
    b.kv_mask.assign(b.batch * spec.kv_len, 0);
    b.visual = Tensor({b.batch, spec.kv_len, spec.d_v});
    b.acoustic = Tensor({b.batch, spec.kv_len, spec.d_a});
    b.labels.resize(b.batch);
    for (std::size_t r = 0; r < b.batch; ++r) {
        const std::size_t i = indices[r];
        b.labels[r] = split.labels[i];
        const auto lt = static_cast<std::size_t>(split.text_len[i]);
        for (std::size_t t = 0; t < spec.text_len; ++t) {
            b.text[r * spec.text_len + t] = split.text[i * spec.text_len + t];
            b.text_mask[r * spec.text_len + t] = t < lt;
        }
        const auto lkv = static_cast<std::size_t>(split.kv_len[i]);
        for (std::size_t t = 0; t < spec.kv_len; ++t) {
            b.kv_mask[r * spec.kv_len + t] = t < lkv;
            for (std::size_t j = 0; j < spec.d_v; ++j) b.visual.at(r, t, j) = split.visual.at(i, t, j);
            for (std::size_t j = 0; j < spec.d_a; ++j) b.acoustic.at(r, t, j) = split.acoustic.at(i, t, j);
        }
    }
    return b;
}

void save_split_file(const Split& split, const DatasetSpec& spec, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open '" + path + "' for writing");
    os.write(kMagic, 4);
    std::uint32_t ver = kVersion;
    os.write(reinterpret_cast<const char*>(&ver), 4);
    write_u64(os, spec.num_classes);
    write_u64(os, spec.train_size);
    write_u64(os, spec.val_size);
    write_u64(os, spec.test_size);
    write_f64(os, spec.zipf_s);
    write_f64(os, spec.text_noise);
    write_f64(os, spec.instance_spread);
    write_f64(os, spec.visual_noise);
    write_f64(os, spec.acoustic_noise);
    write_u64(os, spec.d_v);
    write_u64(os, spec.d_a);
    write_u64(os, spec.vocab_size);
    write_u64(os, spec.text_len);
    write_u64(os, spec.kv_len);
    write_u64(os, spec.latent_dim);
    write_u64(os, spec.seed);
    write_split(os, split);
    if (!os) throw FormatError("write failure on '" + path + "'");
}

Split load_split_file(const std::string& path, DatasetSpec* spec_out) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open '" + path + "'");
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
        throw FormatError("'" + path + "' is not a dataset split file (bad magic)");
    }
    std::uint32_t ver = 0;
    if (!is.read(reinterpret_cast<char*>(&ver), 4)) throw FormatError("dataset file truncated");
    if (ver != kVersion) {
        throw FormatError("dataset version " + std::to_string(ver) + " unsupported (expected " +
                          std::to_string(kVersion) + ")");
    }
    DatasetSpec s;
    s.num_classes = read_u64(is);
    s.train_size = read_u64(is);
    s.val_size = read_u64(is);
    s.test_size = read_u64(is);
    s.zipf_s = read_f64(is);
    s.text_noise = read_f64(is);
    s.instance_spread = read_f64(is);
    s.visual_noise = read_f64(is);
    s.acoustic_noise = read_f64(is);
    s.d_v = read_u64(is);
    s.d_a = read_u64(is);
    s.vocab_size = read_u64(is);
    s.text_len = read_u64(is);
    s.kv_len = read_u64(is);
    s.latent_dim = read_u64(is);
    s.seed = read_u64(is);
    if (spec_out) *spec_out = s;
    return read_split(is);
}

void save_dataset(const Dataset& ds, const std::string& dir) {
    save_split_file(ds.train, ds.spec, dir + "/train.mvds");
    save_split_file(ds.val, ds.spec, dir + "/val.mvds");
    save_split_file(ds.test, ds.spec, dir + "/test.mvds");
    std::ofstream meta(dir + "/dataset.meta");
    if (!meta) throw FormatError("cannot open '" + dir + "/dataset.meta' for writing");
    write_spec(meta, ds.spec);
}

Dataset load_dataset(const std::string& dir) {
    Dataset ds;
    ds.train = load_split_file(dir + "/train.mvds", &ds.spec);
    DatasetSpec check;
    ds.val = load_split_file(dir + "/val.mvds", &check);
    ds.test = load_split_file(dir + "/test.mvds", &check);
    return ds;
}

DatasetSpec preset_clean() {
    DatasetSpec s;
    s.num_classes = 20;
    s.train_size = 2000;
    s.val_size = 400;
    s.test_size = 400;
    s.zipf_s = 0.0;
    s.text_noise = 0.05;
    s.instance_spread = 0.5;
    s.visual_noise = 0.15;
    s.acoustic_noise = 0.15;
    return s;
}

DatasetSpec preset_noisy_longtail() {
    DatasetSpec s = preset_clean();
    s.zipf_s = 1.2;
    s.text_noise = 0.7;
    s.instance_spread = 1.5;
    s.visual_noise = 2.0;
    s.acoustic_noise = 2.0;
    return s;
}

void write_spec(std::ostream& os, const DatasetSpec& s) {
    os << "num_classes = " << s.num_classes << "\n";
    os << "train_size = " << s.train_size << "\n";
    os << "val_size = " << s.val_size << "\n";
    os << "test_size = " << s.test_size << "\n";
    os << "zipf_s = " << s.zipf_s << "\n";
    os << "text_noise = " << s.text_noise << "\n";
    os << "instance_spread = " << s.instance_spread << "\n";
    os << "visual_noise = " << s.visual_noise << "\n";
    os << "acoustic_noise = " << s.acoustic_noise << "\n";
    os << "d_v = " << s.d_v << "\n";
    os << "d_a = " << s.d_a << "\n";
    os << "vocab_size = " << s.vocab_size << "\n";
    os << "text_len = " << s.text_len << "\n";
    os << "kv_len = " << s.kv_len << "\n";
    os << "latent_dim = " << s.latent_dim << "\n";
    os << "seed = " << s.seed << "\n";
}

DatasetSpec parse_spec(std::istream& is) {
    DatasetSpec s;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        auto t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("spec line " + std::to_string(lineno) + ": expected key = value");
        }
        auto key = trim(t.substr(0, eq));
        auto val = trim(t.substr(eq + 1));
        try {
            if (key == "num_classes") s.num_classes = std::stoull(val);
            else if (key == "train_size") s.train_size = std::stoull(val);
            else if (key == "val_size") s.val_size = std::stoull(val);
            else if (key == "test_size") s.test_size = std::stoull(val);
            else if (key == "zipf_s") s.zipf_s = std::stod(val);
            else if (key == "text_noise") s.text_noise = std::stod(val);
            else if (key == "instance_spread") s.instance_spread = std::stod(val);
            else if (key == "visual_noise") s.visual_noise = std::stod(val);
            else if (key == "acoustic_noise") s.acoustic_noise = std::stod(val);
            else if (key == "d_v") s.d_v = std::stoull(val);
            else if (key == "d_a") s.d_a = std::stoull(val);
            else if (key == "vocab_size") s.vocab_size = std::stoull(val);
            else if (key == "text_len") s.text_len = std::stoull(val);
            else if (key == "kv_len") s.kv_len = std::stoull(val);
            else if (key == "latent_dim") s.latent_dim = std::stoull(val);
            else if (key == "seed") s.seed = std::stoull(val);
            else throw ConfigError("spec line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        } catch (const std::invalid_argument&) {
            throw ConfigError("spec line " + std::to_string(lineno) + ": bad value '" + val + "'");
        }
    }
    return s;
}

DatasetSpec load_spec_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open spec file '" + path + "'");
    return parse_spec(is);
}

}  // namespace mvcl::data
