// End-to-end checks of the megdec binary: each case runs the real
// executable as a subprocess and inspects exit code, stdout/stderr and the
// files it leaves behind.

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "support.hpp"
#include "megdec/config.hpp"
#include "megdec/csv.hpp"

using namespace megdec;
using megtest::scratch_dir;

namespace {

constexpr const char* kCliPath = MEGDEC_CLI_PATH;

struct RunResult {
    int code = -1;
    std::string output;  // stdout and stderr combined

    bool contains(const std::string& needle) const {
        return output.find(needle) != std::string::npos;
    }
};

std::string shq(const std::string& s) { return "'" + s + "'"; }

RunResult run_cli(const std::vector<std::string>& args, const std::filesystem::path& dir) {
    static int counter = 0;
    auto capture = dir / ("cli_out_" + std::to_string(counter++) + ".txt");
    std::string cmd = shq(kCliPath);
    for (const auto& a : args) cmd += " " + shq(a);
    cmd += " > " + shq(capture.string()) + " 2>&1";
    int status = std::system(cmd.c_str());
    RunResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.output = read_text_file(capture.string());
    return r;
}

/// Small, fast experiment: 3 classes, 4x20 windows, two conv blocks.
std::string tiny_config_text(const std::string& out_dir, const std::string& extra = "") {
    std::ostringstream os;
    os << "data.classes = 3\n"
          "data.per_class = 6\n"
          "data.channels = 4\n"
          "data.samples = 20\n"
          "data.snr = 4\n"
          "data.seed = 9\n"
          "model.hidden_dim = 8\n"
          "model.groups = 4\n"
          "model.cnn_blocks = 2\n"
          "model.kernel = 3\n"
          "train.lr = 0.003\n"
          "train.epochs = 2\n"
          "train.batch_size = 8\n"
          "train.seed = 21\n"
          "sampling.group_size = 2\n"
       << "output.dir = " << out_dir << "\n"
       << extra;
    return os.str();
}

/// Writes a tiny config into dir, trains it and returns the config path.
std::string trained_fixture(const std::filesystem::path& dir, const std::string& extra = "") {
    auto cfg_path = (dir / "config_in.txt").string();
    write_text_file(cfg_path, tiny_config_text((dir / "run").string(), extra));
    RunResult r = run_cli({"train", cfg_path}, dir);
    CAPTURE(r.output);
    REQUIRE(r.code == 0);
    REQUIRE(std::filesystem::exists(dir / "run" / "model.ckpt"));
    return cfg_path;
}

}  // namespace

TEST_CASE("cli generate writes dataset files and reruns byte-identically") {
    auto dir = scratch_dir("cli_generate");
    std::vector<std::string> base = {"generate", "--classes", "3", "--per-class", "4",
                                     "--channels", "4", "--samples", "18", "--snr", "2",
                                     "--seed", "11"};

    auto args1 = base;
    args1.insert(args1.end(), {"--out", (dir / "d1").string()});
    RunResult r1 = run_cli(args1, dir);
    CAPTURE(r1.output);
    CHECK(r1.code == 0);
    CHECK(std::filesystem::exists(dir / "d1" / "dataset.bin"));
    CHECK(std::filesystem::exists(dir / "d1" / "manifest.csv"));
    CHECK(std::filesystem::exists(dir / "d1" / "config.txt"));
    // per-class counts: 4 train windows, half that for validation and test
    CHECK(r1.contains("class,train,validation,test"));
    CHECK(r1.contains(",4,2,2"));
    CHECK(r1.contains("wrote 24 windows"));

    KvConfig copy = KvConfig::parse_file((dir / "d1" / "config.txt").string());
    CHECK(copy.get_int("data.seed", 0) == 11);
    CHECK(copy.get_string("data.dir", "") == (dir / "d1").string());

    auto args2 = base;
    args2.insert(args2.end(), {"--out", (dir / "d2").string()});
    RunResult r2 = run_cli(args2, dir);
    CHECK(r2.code == 0);
    CHECK(read_text_file((dir / "d1" / "dataset.bin").string()) ==
          read_text_file((dir / "d2" / "dataset.bin").string()));
    CHECK(read_text_file((dir / "d1" / "manifest.csv").string()) ==
          read_text_file((dir / "d2" / "manifest.csv").string()));

    std::vector<std::string> args3 = {"generate", "--classes", "3", "--per-class", "4",
                                      "--channels", "4", "--samples", "18", "--snr", "2",
                                      "--seed", "12", "--out", (dir / "d3").string()};
    RunResult r3 = run_cli(args3, dir);
    CHECK(r3.code == 0);
    CHECK(read_text_file((dir / "d1" / "dataset.bin").string()) !=
          read_text_file((dir / "d3" / "dataset.bin").string()));
}

TEST_CASE("cli train writes checkpoint plus log and reruns bit-identically") {
    auto dir = scratch_dir("cli_train");
    auto cfg1 = (dir / "cfg1.txt").string();
    auto cfg2 = (dir / "cfg2.txt").string();
    write_text_file(cfg1, tiny_config_text((dir / "r1").string()));
    write_text_file(cfg2, tiny_config_text((dir / "r2").string()));

    RunResult r1 = run_cli({"train", cfg1}, dir);
    CAPTURE(r1.output);
    CHECK(r1.code == 0);
    CHECK(r1.contains("training resnet_cnn"));
    CHECK(r1.contains("best epoch"));
    CHECK(std::filesystem::exists(dir / "r1" / "model.ckpt"));
    CHECK(std::filesystem::exists(dir / "r1" / "train_log.csv"));
    CHECK(std::filesystem::exists(dir / "r1" / "config.txt"));

    RunResult r2 = run_cli({"train", cfg2}, dir);
    CHECK(r2.code == 0);
    CHECK(read_text_file((dir / "r1" / "model.ckpt").string()) ==
          read_text_file((dir / "r2" / "model.ckpt").string()));
    CHECK(read_text_file((dir / "r1" / "train_log.csv").string()) ==
          read_text_file((dir / "r2" / "train_log.csv").string()));

    auto log = read_csv((dir / "r1" / "train_log.csv").string());
    REQUIRE(log.size() >= 2);
    CHECK(log[0] == std::vector<std::string>{"epoch", "train_loss", "train_f1", "val_f1",
                                             "is_best"});
}

TEST_CASE("cli evaluate scores a checkpoint in both grouping modes") {
    auto dir = scratch_dir("cli_evaluate");
    std::string cfg = trained_fixture(dir);

    RunResult ru = run_cli({"evaluate", cfg, "--split", "test", "--ungrouped"}, dir);
    CAPTURE(ru.output);
    CHECK(ru.code == 0);
    CHECK(ru.contains("split=test mode=ungrouped n=9"));
    auto ungrouped = read_csv((dir / "run" / "eval_test_ungrouped.csv").string());
    REQUIRE(ungrouped.size() == 5);  // header, three classes, macro row
    CHECK(ungrouped[0][0] == "class");
    CHECK(ungrouped[4][0] == "macro");

    RunResult rg = run_cli({"evaluate", cfg, "--split", "test", "--grouped", "--group-size", "3"},
                           dir);
    CAPTURE(rg.output);
    CHECK(rg.code == 0);
    CHECK(rg.contains("split=test mode=grouped n=3"));
    CHECK(std::filesystem::exists(dir / "run" / "eval_test_grouped.csv"));

    RunResult rb = run_cli({"evaluate", cfg, "--grouped", "--ungrouped"}, dir);
    CHECK(rb.code == 2);
    CHECK(rb.contains("mutually exclusive"));
}

TEST_CASE("cli evaluate rejects a checkpoint built for other geometry") {
    auto dir = scratch_dir("cli_geometry");
    std::string cfg = trained_fixture(dir);

    auto other_cfg = (dir / "other.txt").string();
    std::string text = tiny_config_text((dir / "other_run").string());
    size_t pos = text.find("data.channels = 4");
    REQUIRE(pos != std::string::npos);
    text.replace(pos, 17, "data.channels = 5");
    write_text_file(other_cfg, text);

    RunResult r = run_cli({"evaluate", other_cfg, "--checkpoint",
                           (dir / "run" / "model.ckpt").string()},
                          dir);
    CAPTURE(r.output);
    CHECK(r.code == 2);
    CHECK(r.contains("was built for"));
}

TEST_CASE("cli saliency writes the five-file report") {
    auto dir = scratch_dir("cli_saliency");
    std::string cfg = trained_fixture(dir);

    RunResult r = run_cli({"saliency", cfg, "--split", "validation", "--max-per-class", "4"},
                          dir);
    CAPTURE(r.output);
    CHECK(r.code == 0);
    CHECK(r.contains("saliency grid 3x3"));

    auto base = dir / "run";
    CHECK(std::filesystem::exists(base / "saliency_validation_raw.csv"));
    CHECK(std::filesystem::exists(base / "saliency_validation_norm.csv"));
    CHECK(std::filesystem::exists(base / "saliency_validation_layer_tree.csv"));
    CHECK(std::filesystem::exists(base / "saliency_validation_phoneme_tree.csv"));
    CHECK(std::filesystem::exists(base / "saliency_validation_clustermap.svg"));

    auto raw = read_csv((base / "saliency_validation_raw.csv").string());
    REQUIRE(raw.size() == 4);  // header + conv0 + conv1 + head
    CHECK(raw[0][0] == "layer");
    CHECK(raw[0].size() == 4);
    CHECK(raw[1][0] == "conv0");
    CHECK(raw[3][0] == "head");

    std::string svg = read_text_file((base / "saliency_validation_clustermap.svg").string());
    CHECK(svg.rfind("<svg ", 0) == 0);
}

TEST_CASE("cli similarity writes matrices and a summary") {
    auto dir = scratch_dir("cli_similarity");
    std::string cfg = trained_fixture(dir);

    RunResult r = run_cli({"similarity", cfg, "--split-a", "validation", "--split-b", "test"},
                          dir);
    CAPTURE(r.output);
    CHECK(r.code == 0);
    CHECK(r.contains("pearson"));
    CHECK(r.contains("spearman"));

    auto base = dir / "run";
    CHECK(std::filesystem::exists(base / "similarity_validation_test_pearson.csv"));
    CHECK(std::filesystem::exists(base / "similarity_validation_test_spearman.csv"));
    auto summary = read_csv((base / "similarity_validation_test_summary.csv").string());
    REQUIRE(summary.size() == 3);
    CHECK(summary[0] == std::vector<std::string>{"metric", "mean", "stddev", "cells", "missing"});
    CHECK(summary[1][0] == "pearson");
    CHECK(summary[2][0] == "spearman");
}

TEST_CASE("cli sweep expands a config matrix into cell directories") {
    auto dir = scratch_dir("cli_sweep");
    auto cfg = (dir / "base.txt").string();
    write_text_file(cfg, tiny_config_text((dir / "sweep").string()));

    RunResult r = run_cli({"sweep", cfg, "--set", "train.lr=0.001,0.01", "--set",
                           "model.hidden_dim=8,16"},
                          dir);
    CAPTURE(r.output);
    CHECK(r.code == 0);
    CHECK(r.contains("4 sweep cells"));

    const char* cells[] = {"lr-0.001__hidden_dim-8", "lr-0.01__hidden_dim-8",
                           "lr-0.001__hidden_dim-16", "lr-0.01__hidden_dim-16"};
    for (const char* cell : cells) {
        auto cell_dir = dir / "sweep" / cell;
        CAPTURE(cell);
        CHECK(std::filesystem::exists(cell_dir / "config.txt"));
        // expansion only; no training without --run
        CHECK_FALSE(std::filesystem::exists(cell_dir / "model.ckpt"));
    }

    ExperimentConfig cell_cfg = ExperimentConfig::from_file(
        (dir / "sweep" / "lr-0.01__hidden_dim-16" / "config.txt").string());
    CHECK(cell_cfg.train.lr == 0.01);
    CHECK(cell_cfg.model.hidden_dim == 16);
    CHECK(cell_cfg.output_dir == (dir / "sweep" / "lr-0.01__hidden_dim-16").string());

    RunResult rbad = run_cli({"sweep", cfg}, dir);
    CHECK(rbad.code == 2);
    CHECK(rbad.contains("at least one --set"));
}

TEST_CASE("cli exit codes distinguish usage, config and missing-file errors") {
    auto dir = scratch_dir("cli_exit");

    CHECK(run_cli({}, dir).code == 2);
    CHECK(run_cli({"frobnicate"}, dir).code == 2);

    RunResult help = run_cli({"--help"}, dir);
    CHECK(help.code == 0);
    CHECK(help.contains("generate"));
    CHECK(help.contains("train"));

    RunResult missing = run_cli({"train", (dir / "absent.txt").string()}, dir);
    CHECK(missing.code == 2);
    CHECK(missing.contains("cannot open"));

    auto unknown_cfg = (dir / "unknown.txt").string();
    write_text_file(unknown_cfg, tiny_config_text((dir / "u").string(), "mystery.key = 1\n"));
    RunResult unknown = run_cli({"train", unknown_cfg}, dir);
    CHECK(unknown.code == 2);
    CHECK(unknown.contains("unknown config key"));

    auto bad_cfg = (dir / "bad.txt").string();
    std::string bad_text = tiny_config_text((dir / "b").string());
    size_t pos = bad_text.find("train.epochs = 2");
    REQUIRE(pos != std::string::npos);
    bad_text.replace(pos, 16, "train.epochs = banana");
    write_text_file(bad_cfg, bad_text);
    RunResult bad = run_cli({"train", bad_cfg}, dir);
    CHECK(bad.code == 2);
    CHECK(bad.contains("wants an integer"));

    auto no_ckpt_cfg = (dir / "no_ckpt.txt").string();
    write_text_file(no_ckpt_cfg, tiny_config_text((dir / "empty_run").string()));
    RunResult noc = run_cli({"evaluate", no_ckpt_cfg}, dir);
    CHECK(noc.code == 2);

    write_text_file((dir / "blocker").string(), "in the way");
    RunResult blocked = run_cli({"generate", "--classes", "2", "--per-class", "2", "--channels",
                                 "2", "--samples", "8", "--out", (dir / "blocker").string()},
                                dir);
    CHECK(blocked.code == 2);
}

TEST_CASE("cli train reports divergence with exit code 1") {
    auto dir = scratch_dir("cli_diverge");
    auto cfg = (dir / "cfg.txt").string();
    std::string text = tiny_config_text((dir / "run").string());
    size_t pos = text.find("train.lr = 0.003");
    REQUIRE(pos != std::string::npos);
    text.replace(pos, 16, "train.lr = 1e25");
    write_text_file(cfg, text);

    RunResult r = run_cli({"train", cfg}, dir);
    CAPTURE(r.output);
    CHECK(r.code == 1);
    CHECK(r.contains("diverged"));
    // the best checkpoint so far is still saved
    CHECK(std::filesystem::exists(dir / "run" / "model.ckpt"));
}
