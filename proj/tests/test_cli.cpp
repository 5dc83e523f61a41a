// End-to-end tests driving the installed CLI binary (path in argv[1]).
#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

std::string g_cli;
fs::path g_work;

struct RunResult {
    int exit_code = -1;
    std::string out;
};

RunResult run(const std::string& args) {
    const auto out_file = g_work / "cmd_out.txt";
    const std::string cmd = g_cli + " " + args + " >" + out_file.string() + " 2>&1";
    const int rc = std::system(cmd.c_str());
    RunResult r;
    r.exit_code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    std::ifstream is(out_file);
    std::stringstream ss;
    ss << is.rdbuf();
    r.out = ss.str();
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::map<std::string, std::string> parse_kv(const fs::path& p) {
    std::map<std::string, std::string> kv;
    std::ifstream is(p);
    std::string line;
    while (std::getline(is, line)) {
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto key = line.substr(0, eq);
        auto val = line.substr(eq + 1);
        auto strip = [](std::string s) {
            const auto b = s.find_first_not_of(" \t");
            const auto e = s.find_last_not_of(" \t");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        kv[strip(key)] = strip(val);
    }
    return kv;
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream(p) << text;
}

const char* kTinyConfig =
    "lr = 2e-3\n"
    "batch_size = 16\n"
    "max_epochs = 3\n"
    "patience = 5\n"
    "d_model = 8\n"
    "heads = 2\n"
    "n_enc_blocks = 1\n"
    "n_coarse_blocks = 1\n"
    "seed = 0\n";

}  // namespace

TEST_CASE("gen: missing spec file exits 2 with a message") {
    auto r = run("gen --spec /nonexistent/spec.txt --out " + (g_work / "nope").string());
    CHECK(r.exit_code == 2);
    CHECK(!r.out.empty());
}

TEST_CASE("gen: presets and dataset generation") {
    write_file(g_work / "spec.txt",
               "num_classes = 4\ntrain_size = 64\nval_size = 16\ntest_size = 16\nseed = 3\n"
               "text_len = 6\nkv_len = 4\nd_v = 4\nd_a = 4\nvocab_size = 40\nlatent_dim = 6\n");
    auto data_dir = g_work / "data";
    auto r = run("gen --spec " + (g_work / "spec.txt").string() + " --out " + data_dir.string());
    REQUIRE(r.exit_code == 0);
    for (const char* f : {"train.mvds", "val.mvds", "test.mvds", "dataset.meta"}) {
        CHECK(fs::exists(data_dir / f));
    }

    auto preset_dir = g_work / "preset";
    r = run("gen --preset noisy-longtail --out " + preset_dir.string());
    REQUIRE(r.exit_code == 0);
    auto meta = parse_kv(preset_dir / "dataset.meta");
    CHECK(meta.at("zipf_s").substr(0, 3) == "1.2");
    CHECK(meta.at("num_classes") == "20");

    auto bad = run("gen --preset sideways --out " + (g_work / "bad").string());
    CHECK(bad.exit_code == 2);
}

TEST_CASE("train/eval: eval reproduces the logged best validation WF1") {
    write_file(g_work / "train.cfg", kTinyConfig);
    auto data_dir = (g_work / "data").string();
    auto run_dir = g_work / "run1";
    auto r = run("train --config " + (g_work / "train.cfg").string() + " --data " + data_dir +
                 " --out " + run_dir.string());
    REQUIRE(r.exit_code == 0);
    for (const char* f : {"train.log", "checkpoint.mvck", "results.txt", "manifest.txt"}) {
        CHECK(fs::exists(run_dir / f));
    }
    auto results = parse_kv(run_dir / "results.txt");

    auto eval_dir = g_work / "eval1";
    r = run("eval --checkpoint " + (run_dir / "checkpoint.mvck").string() + " --data " + data_dir +
            " --out " + eval_dir.string() + " --split val");
    REQUIRE(r.exit_code == 0);
    auto eval_kv = parse_kv(eval_dir / "eval.txt");
    CHECK(eval_kv.at("val_weighted_f1") == results.at("best_val_wf1"));
    CHECK(eval_kv.at("val_weighted_f1") == results.at("val_weighted_f1"));
}

TEST_CASE("train: identical invocations give identical results files") {
    auto data_dir = (g_work / "data").string();
    auto r2 = run("train --config " + (g_work / "train.cfg").string() + " --data " + data_dir +
                  " --out " + (g_work / "run2").string());
    REQUIRE(r2.exit_code == 0);
    CHECK(slurp(g_work / "run1" / "results.txt") == slurp(g_work / "run2" / "results.txt"));
    CHECK(slurp(g_work / "run1" / "train.log") == slurp(g_work / "run2" / "train.log"));
    CHECK(slurp(g_work / "run1" / "checkpoint.mvck") == slurp(g_work / "run2" / "checkpoint.mvck"));
}

TEST_CASE("train: config errors exit 2") {
    write_file(g_work / "bad.cfg", "lr = 0.001\nwarp_drive = on\n");
    auto r = run("train --config " + (g_work / "bad.cfg").string() + " --data " +
                 (g_work / "data").string() + " --out " + (g_work / "badrun").string());
    CHECK(r.exit_code == 2);
    CHECK(r.out.find("warp_drive") != std::string::npos);
}

TEST_CASE("ablate: four seed-averaged rows") {
    write_file(g_work / "ablate.cfg",
               "lr = 2e-3\nbatch_size = 16\nmax_epochs = 1\npatience = 5\nd_model = 8\n"
               "heads = 2\nn_enc_blocks = 1\nn_coarse_blocks = 1\n");
    auto out_dir = g_work / "ablate";
    auto r = run("ablate --config " + (g_work / "ablate.cfg").string() + " --data " +
                 (g_work / "data").string() + " --out " + out_dir.string() + " --seeds 0,1");
    REQUIRE(r.exit_code == 0);

    std::ifstream table(out_dir / "ablation.tsv");
    std::string line;
    std::vector<std::string> rows;
    while (std::getline(table, line)) rows.push_back(line);
    REQUIRE(rows.size() == 5);  // header + 4 mask rows
    CHECK(rows[0].find("test_wf1_mean") != std::string::npos);
    CHECK(rows[1].substr(0, 4) == "cls\t");
    CHECK(rows[4].substr(0, 22) == "cls+contrastive+proto\t");

    std::ifstream detail(out_dir / "ablation_cells.tsv");
    std::size_t cells = 0;
    std::getline(detail, line);
    while (std::getline(detail, line)) ++cells;
    CHECK(cells == 8);  // 4 masks x 2 seeds
}

TEST_CASE("attn-stats: per-instance weights sum to 1") {
    auto out_dir = g_work / "attn";
    auto r = run("attn-stats --checkpoint " + (g_work / "run1" / "checkpoint.mvck").string() +
                 " --data " + (g_work / "data").string() + " --out " + out_dir.string());
    REQUIRE(r.exit_code == 0);

    // Summary printed to stdout: one row per stream, 3 + 2 = 5.
    std::size_t summary_rows = 0;
    {
        std::stringstream ss(r.out);
        std::string line;
        while (std::getline(ss, line)) {
            if (line.rfind("daf1\t", 0) == 0 || line.rfind("daf2\t", 0) == 0) ++summary_rows;
        }
    }
    CHECK(summary_rows == 5);

    std::ifstream is(out_dir / "attn_weights.tsv");
    std::string header;
    std::getline(is, header);
    std::map<std::string, double> sums;  // (instance, gate) -> weight sum
    std::string inst, gate, stream;
    double w;
    while (is >> inst >> gate >> stream >> w) {
        CHECK(w >= 0.0);
        sums[inst + "/" + gate] += w;
    }
    CHECK(sums.size() == 2 * 16);  // both gates for each of 16 test instances
    for (const auto& [key, total] : sums) CHECK(std::abs(total - 1.0) < 1e-6);
}

TEST_CASE("dump-embeddings: instances plus unit-norm prototypes") {
    auto out_dir = g_work / "emb";
    auto r = run("dump-embeddings --checkpoint " + (g_work / "run1" / "checkpoint.mvck").string() +
                 " --data " + (g_work / "data").string() + " --out " + out_dir.string());
    REQUIRE(r.exit_code == 0);
    CHECK(r.out.find("silhouette = ") != std::string::npos);

    std::ifstream is(out_dir / "embeddings.tsv");
    std::string line;
    std::getline(is, line);  // header
    std::size_t instances = 0, prototypes = 0;
    while (std::getline(is, line)) {
        std::stringstream ss(line);
        std::string kind, label;
        ss >> kind >> label;
        std::vector<double> vals;
        double v;
        while (ss >> v) vals.push_back(v);
        CHECK(vals.size() == 8);  // d_model
        if (kind == "instance") {
            ++instances;
        } else {
            REQUIRE(kind == "prototype");
            ++prototypes;
            double norm2 = 0;
            for (double x : vals) norm2 += x * x;
            CHECK(std::abs(std::sqrt(norm2) - 1.0) < 1e-9);
        }
    }
    CHECK(instances == 16);   // test split size
    CHECK(prototypes == 4);   // one per class
}

TEST_CASE("checkpoint/data mismatch rejected") {
    auto other = g_work / "other_data";
    write_file(g_work / "spec2.txt",
               "num_classes = 5\ntrain_size = 20\nval_size = 5\ntest_size = 5\n"
               "d_v = 4\nd_a = 4\nvocab_size = 40\ntext_len = 6\nkv_len = 4\nlatent_dim = 6\n");
    REQUIRE(run("gen --spec " + (g_work / "spec2.txt").string() + " --out " + other.string())
                .exit_code == 0);
    auto r = run("eval --checkpoint " + (g_work / "run1" / "checkpoint.mvck").string() + " --data " +
                 other.string() + " --out " + (g_work / "mismatch").string());
    CHECK(r.exit_code == 2);
}

int main(int argc, char** argv) {
    if (argc < 2) {
        std::fprintf(stderr, "usage: test_cli <path-to-cli-binary> [doctest args]\n");
        return 1;
    }
    g_cli = argv[1];
    g_work = fs::temp_directory_path() / "mvcl_test_cli";
    fs::remove_all(g_work);
    fs::create_directories(g_work);

    doctest::Context ctx;
    ctx.applyCommandLine(argc - 1, argv + 1);
    return ctx.run();
}
