#include "mvcl/config.hpp"

#include <fstream>
#include <sstream>

#include "mvcl/errors.hpp"
#include "mvcl/rng.hpp"

namespace mvcl {

namespace {

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& v, std::size_t lineno) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config line " + std::to_string(lineno) + ": expected boolean, got '" + v + "'");
}

}  // namespace

TrainConfig parse_train_config(std::istream& is) {
    TrainConfig c;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        auto t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        }
        auto key = trim(t.substr(0, eq));
        auto val = trim(t.substr(eq + 1));
        try {
            if (key == "lr") c.opt.lr = std::stod(val);
            else if (key == "weight_decay") c.opt.weight_decay = std::stod(val);
            else if (key == "batch_size") c.batch_size = std::stoull(val);
            else if (key == "tau") c.temp.tau = std::stod(val);
            else if (key == "max_epochs") c.max_epochs = std::stoull(val);
            else if (key == "patience") c.patience = std::stoull(val);
            else if (key == "seed") c.seed = std::stoull(val);
            else if (key == "mask_cls") c.mask.cls = parse_bool(val, lineno);
            else if (key == "mask_contrastive") c.mask.contrastive = parse_bool(val, lineno);
            else if (key == "mask_proto") c.mask.proto = parse_bool(val, lineno);
            else if (key == "d_model") c.model.d_model = std::stoull(val);
            else if (key == "heads") c.model.heads = std::stoull(val);
            else if (key == "n_enc_blocks") c.model.n_enc_blocks = std::stoull(val);
            else if (key == "n_coarse_blocks") c.model.n_coarse_blocks = std::stoull(val);
            else if (key == "ff_mult") c.model.ff_mult = std::stoull(val);
            else if (key == "p_mask") c.model.p_mask = std::stod(val);
            else if (key == "proto_views") {
                if (val == "fused") c.model.proto_per_view = false;
                else if (val == "per-view-mean") c.model.proto_per_view = true;
                else throw ConfigError("config line " + std::to_string(lineno) +
                                       ": proto_views must be 'fused' or 'per-view-mean'");
            } else {
                throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
            }
        } catch (const std::invalid_argument&) {
            throw ConfigError("config line " + std::to_string(lineno) + ": bad value '" + val + "'");
        } catch (const std::out_of_range&) {
            throw ConfigError("config line " + std::to_string(lineno) + ": value out of range '" + val + "'");
        }
    }
    return c;
}

TrainConfig load_train_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file '" + path + "'");
    return parse_train_config(is);
}

void write_train_config(std::ostream& os, const TrainConfig& c) {
    os << "lr = " << c.opt.lr << "\n";
    os << "weight_decay = " << c.opt.weight_decay << "\n";
    os << "batch_size = " << c.batch_size << "\n";
    os << "tau = " << c.temp.tau << "\n";
    os << "max_epochs = " << c.max_epochs << "\n";
    os << "patience = " << c.patience << "\n";
    os << "seed = " << c.seed << "\n";
    os << "mask_cls = " << (c.mask.cls ? "true" : "false") << "\n";
    os << "mask_contrastive = " << (c.mask.contrastive ? "true" : "false") << "\n";
    os << "mask_proto = " << (c.mask.proto ? "true" : "false") << "\n";
    os << "d_model = " << c.model.d_model << "\n";
    os << "heads = " << c.model.heads << "\n";
    os << "n_enc_blocks = " << c.model.n_enc_blocks << "\n";
    os << "n_coarse_blocks = " << c.model.n_coarse_blocks << "\n";
    os << "ff_mult = " << c.model.ff_mult << "\n";
    os << "p_mask = " << c.model.p_mask << "\n";
    os << "proto_views = " << (c.model.proto_per_view ? "per-view-mean" : "fused") << "\n";
}

std::uint64_t hash_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open '" + path + "' for hashing");
    std::uint64_t h = 1469598103934665603ull;
    char buf[65536];
    while (is.read(buf, sizeof(buf)) || is.gcount() > 0) {
        for (std::streamsize i = 0; i < is.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ull;
        }
    }
    return h;
}

void write_manifest(const std::string& path, const RunManifest& m) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot open '" + path + "' for writing");
    os << "command = " << m.command << "\n";
    os << "dataset = " << m.dataset_path << "\n";
    os << "dataset_hash = " << m.dataset_hash << "\n";
    os << "seed = " << m.seed << "\n";
    os << "code_version = 1\n";
    for (const auto& a : m.artifacts) os << "artifact = " << a << "\n";
    os << "# config snapshot\n";
    write_train_config(os, m.config);
}

}  // namespace mvcl
