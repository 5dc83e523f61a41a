#pragma once

// Flat key-value run configuration and run manifests.

#include <iosfwd>
#include <string>

#include "mvcl/trainer.hpp"

namespace mvcl {

// Parses a `key = value` config file. Unknown keys are fatal. Dataset-
// derived fields (vocab, feature dims, class count) are filled from the
// dataset at load time, not from the config.
TrainConfig parse_train_config(std::istream& is);
TrainConfig load_train_config(const std::string& path);
void write_train_config(std::ostream& os, const TrainConfig& cfg);

std::uint64_t hash_file(const std::string& path);  // FNV-1a over bytes

struct RunManifest {
    std::string command;
    TrainConfig config;
    std::string dataset_path;
    std::uint64_t dataset_hash = 0;
    std::uint64_t seed = 0;
    std::vector<std::string> artifacts;
};

void write_manifest(const std::string& path, const RunManifest& m);

}  // namespace mvcl
