#include <cstring>
#include <fstream>

#include "mvcl/errors.hpp"
#include "mvcl/trainer.hpp"

namespace mvcl {

namespace {

constexpr char kMagic[4] = {'M', 'V', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void write_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
void write_f64(std::ostream& os, double v) { os.write(reinterpret_cast<const char*>(&v), 8); }

std::uint64_t read_u64(std::istream& is) {
    std::uint64_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), 8)) throw FormatError("checkpoint truncated");
    return v;
}

double read_f64(std::istream& is) {
    double v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), 8)) throw FormatError("checkpoint truncated");
    return v;
}

void write_str(std::ostream& os, const std::string& s) {
    write_u64(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_str(std::istream& is) {
    std::string s(read_u64(is), '\0');
    if (!is.read(s.data(), static_cast<std::streamsize>(s.size()))) {
        throw FormatError("checkpoint truncated");
    }
    return s;
}

void write_tensor(std::ostream& os, const Tensor& t) {
    write_u64(os, t.rank());
    for (auto d : t.shape()) write_u64(os, d);
    os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * 8));
}

Tensor read_tensor(std::istream& is) {
    Shape shape(read_u64(is));
    if (shape.size() > 8) throw FormatError("checkpoint corrupt: implausible tensor rank");
    for (auto& d : shape) d = read_u64(is);
    Tensor t(shape);
    if (!is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * 8))) {
        throw FormatError("checkpoint truncated");
    }
    return t;
}

void write_tensor_map(std::ostream& os, const std::map<std::string, Tensor>& m) {
    write_u64(os, m.size());
    for (const auto& [name, t] : m) {
        write_str(os, name);
        write_tensor(os, t);
    }
}

std::map<std::string, Tensor> read_tensor_map(std::istream& is) {
    std::map<std::string, Tensor> m;
    const auto n = read_u64(is);
    for (std::uint64_t i = 0; i < n; ++i) {
        auto name = read_str(is);
        m.emplace(std::move(name), read_tensor(is));
    }
    return m;
}

void write_model_cfg(std::ostream& os, const ModelConfig& c) {
    write_u64(os, c.d_model);
    write_u64(os, c.heads);
    write_u64(os, c.n_enc_blocks);
    write_u64(os, c.n_coarse_blocks);
    write_u64(os, c.ff_mult);
    write_f64(os, c.p_mask);
    write_u64(os, c.vocab_size);
    write_u64(os, c.d_v);
    write_u64(os, c.d_a);
    write_u64(os, c.num_classes);
    write_u64(os, c.proto_per_view ? 1 : 0);
}

ModelConfig read_model_cfg(std::istream& is) {
    ModelConfig c;
    c.d_model = read_u64(is);
    c.heads = read_u64(is);
    c.n_enc_blocks = read_u64(is);
    c.n_coarse_blocks = read_u64(is);
    c.ff_mult = read_u64(is);
    c.p_mask = read_f64(is);
    c.vocab_size = read_u64(is);
    c.d_v = read_u64(is);
    c.d_a = read_u64(is);
    c.num_classes = read_u64(is);
    c.proto_per_view = read_u64(is) != 0;
    return c;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open '" + path + "' for writing");
    os.write(kMagic, 4);
    std::uint32_t ver = kVersion;
    os.write(reinterpret_cast<const char*>(&ver), 4);
    write_model_cfg(os, ck.model_cfg);
    write_tensor_map(os, ck.params);
    write_u64(os, ck.opt_state.size());
    for (const auto& [name, slot] : ck.opt_state) {
        write_str(os, name);
        write_tensor(os, slot.m);
        write_tensor(os, slot.v);
    }
    write_u64(os, static_cast<std::uint64_t>(ck.opt_steps));
    write_u64(os, ck.epochs_done);
    write_f64(os, ck.best_wf1);
    write_u64(os, ck.best_epoch);
    write_u64(os, ck.since_best);
    write_tensor_map(os, ck.best_params);
    write_str(os, ck.shuffle_rng_state);
    write_str(os, ck.mask_rng_state);
    if (!os) throw FormatError("write failure on '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open '" + path + "'");
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
        throw FormatError("'" + path + "' is not a checkpoint file (bad magic)");
    }
    std::uint32_t ver = 0;
    if (!is.read(reinterpret_cast<char*>(&ver), 4) || ver != kVersion) {
        throw FormatError("unsupported checkpoint version");
    }
    Checkpoint ck;
    ck.model_cfg = read_model_cfg(is);
    ck.params = read_tensor_map(is);
    const auto n_slots = read_u64(is);
    for (std::uint64_t i = 0; i < n_slots; ++i) {
        auto name = read_str(is);
        AdamW::Slot slot;
        slot.m = read_tensor(is);
        slot.v = read_tensor(is);
        ck.opt_state.emplace(std::move(name), std::move(slot));
    }
    ck.opt_steps = static_cast<std::int64_t>(read_u64(is));
    ck.epochs_done = read_u64(is);
    ck.best_wf1 = read_f64(is);
    ck.best_epoch = read_u64(is);
    ck.since_best = read_u64(is);
    ck.best_params = read_tensor_map(is);
    ck.shuffle_rng_state = read_str(is);
    ck.mask_rng_state = read_str(is);
    return ck;
}

}  // namespace mvcl
