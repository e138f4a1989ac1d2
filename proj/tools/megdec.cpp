// megdec: batch front door for dataset generation, training, evaluation
// and saliency reporting. Exit codes: 0 success, 1 runtime numeric fault,
// 2 usage or configuration error.

#include <cmath>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "megdec/cluster.hpp"
#include "megdec/config.hpp"
#include "megdec/csv.hpp"
#include "megdec/saliency.hpp"
#include "megdec/svg.hpp"
#include "megdec/synthetic.hpp"
#include "megdec/train.hpp"

namespace {

using namespace megdec;

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
}

void write_config_copy(const ExperimentConfig& cfg, const std::string& dir) {
    ensure_dir(dir);
    write_text_file(dir + "/config.txt", cfg.to_kv().serialize());
}

/// Native datasets carry their own geometry; make the model and the
/// provenance copy agree with what was actually loaded.
void sync_geometry(ExperimentConfig& cfg, const Dataset& ds) {
    cfg.model.channels = ds.channels;
    cfg.model.samples = ds.samples;
    cfg.model.n_classes = ds.inventory.size();
    cfg.synth.channels = ds.channels;
    cfg.synth.samples = ds.samples;
    cfg.synth.classes = ds.inventory.size();
    cfg.model.validate();
}

Model load_checkpoint(const std::string& path, const Dataset& ds) {
    Model model = Model::load(path);
    const ModelSpec& s = model.spec();
    if (s.channels != ds.channels || s.samples != ds.samples ||
        s.n_classes != ds.inventory.size()) {
        std::ostringstream os;
        os << "checkpoint '" << path << "' was built for " << s.channels << "x" << s.samples
           << " windows over " << s.n_classes << " classes, but the dataset has " << ds.channels
           << "x" << ds.samples << " over " << ds.inventory.size();
        throw UsageError(os.str());
    }
    return model;
}

void print_histogram(const Dataset& ds) {
    const Split splits[] = {Split::train, Split::validation, Split::test, Split::holdout};
    std::cout << "class";
    for (Split s : splits) {
        if (ds.split_count(s)) std::cout << ',' << split_name(s);
    }
    std::cout << '\n';
    for (int c = 0; c < ds.inventory.size(); ++c) {
        std::cout << ds.inventory.symbol(c);
        for (Split s : splits) {
            if (ds.split_count(s)) std::cout << ',' << ds.class_histogram(s)[size_t(c)];
        }
        std::cout << '\n';
    }
}

void write_eval_report(const EvalResult& r, const PhonemeInventory& inv,
                       const std::string& path) {
    std::ostringstream os;
    os << "class,symbol,tp,fp,fn,precision,recall,f1\n";
    os.precision(10);
    long long tp = 0, fp = 0, fn = 0;
    for (size_t c = 0; c < r.report.per_class.size(); ++c) {
        const ClassScore& s = r.report.per_class[c];
        os << c << ',' << inv.symbol(int(c)) << ',' << s.tp << ',' << s.fp << ',' << s.fn << ','
           << s.precision << ',' << s.recall << ',' << s.f1 << '\n';
        tp += s.tp;
        fp += s.fp;
        fn += s.fn;
    }
    os << "macro,," << tp << ',' << fp << ',' << fn << ",,," << r.report.macro_f1 << '\n';
    write_text_file(path, os.str());
}

/// Missing cells cannot enter a Euclidean distance; cluster on a
/// zero-filled copy so absent classes behave as all-zero saliency.
RowMatrix<double> finite_copy(const RowMatrix<double>& m) {
    RowMatrix<double> out = m;
    for (Index i = 0; i < out.rows(); ++i) {
        for (Index j = 0; j < out.cols(); ++j) {
            if (std::isnan(out(i, j))) out(i, j) = 0.0;
        }
    }
    return out;
}

std::string summary_line(const char* name, const SimilaritySummary& s) {
    std::ostringstream os;
    os.precision(4);
    os << std::fixed << name << ' ' << s.mean << " +- " << s.stddev << " (cells=" << s.cells
       << ", missing=" << s.missing << ")";
    return os.str();
}

struct GenerateArgs {
    std::string config_path;
    std::string out = "data";
    int classes = 39;
    int per_class = 200;
    double snr = 0.5;
    std::uint64_t seed = 7;
    long long channels = 306;
    long long samples = 125;
    double session_drift = 0.0;
};

int cmd_generate(const GenerateArgs& a, const CLI::App& sub) {
    ExperimentConfig cfg;
    if (!a.config_path.empty()) cfg = ExperimentConfig::from_file(a.config_path);
    auto flag = [&](const char* name) { return sub.count(name) > 0; };
    if (flag("--classes")) cfg.synth.classes = a.classes;
    if (flag("--per-class")) cfg.synth.per_class = a.per_class;
    if (flag("--snr")) cfg.synth.snr = a.snr;
    if (flag("--seed")) cfg.synth.seed = a.seed;
    if (flag("--channels")) cfg.synth.channels = Index(a.channels);
    if (flag("--samples")) cfg.synth.samples = Index(a.samples);
    if (flag("--session-drift")) cfg.synth.session_drift = a.session_drift;
    if (flag("--out") || a.config_path.empty()) cfg.output_dir = a.out;
    cfg.model.channels = cfg.synth.channels;
    cfg.model.samples = cfg.synth.samples;
    cfg.model.n_classes = cfg.synth.classes;

    Dataset ds = generate_synthetic(cfg.synth);
    ensure_dir(cfg.output_dir);
    write_dataset(ds, cfg.output_dir + "/dataset.bin", cfg.output_dir + "/manifest.csv");
    cfg.data_dir = cfg.output_dir;
    write_config_copy(cfg, cfg.output_dir);
    print_histogram(ds);
    std::cout << "wrote " << ds.windows.size() << " windows to " << cfg.output_dir << '\n';
    return 0;
}

int cmd_train(const std::string& config_path) {
    ExperimentConfig cfg = ExperimentConfig::from_file(config_path);
    Dataset ds = load_experiment_data(cfg);
    sync_geometry(cfg, ds);
    write_config_copy(cfg, cfg.output_dir);

    Model model = Model::build(cfg.model, cfg.train.seed);
    std::cout << "training " << arch_name(cfg.model.arch) << " (" << model.param_count()
              << " parameters) for " << cfg.train.epochs << " epochs\n";
    TrainLog log = train(model, ds, cfg.train);
    write_train_log(log, cfg.output_dir + "/train_log.csv");
    model.save(cfg.output_dir + "/model.ckpt");

    for (const EpochRow& row : log.rows) {
        std::cout << "epoch " << row.epoch << ": loss=" << row.train_loss
                  << " train_f1=" << row.train_f1 << " val_f1=" << row.val_f1
                  << (row.is_best ? " *" : "") << '\n';
    }
    if (log.diverged) {
        std::cout << "training diverged; kept the best checkpoint (epoch " << log.best_epoch
                  << ")\n";
        return 1;
    }
    std::cout << "best epoch " << log.best_epoch << " val_f1=" << log.best_val_f1 << '\n';
    return 0;
}

int cmd_evaluate(const std::string& config_path, const std::string& checkpoint,
                 const std::string& split, bool grouped, long long group_size) {
    ExperimentConfig cfg = ExperimentConfig::from_file(config_path);
    Dataset ds = load_experiment_data(cfg);
    sync_geometry(cfg, ds);
    std::string ckpt = checkpoint.empty() ? cfg.output_dir + "/model.ckpt" : checkpoint;
    Model model = load_checkpoint(ckpt, ds);

    Split s = split_from_name(split);
    EvalResult r = evaluate(model, ds, s, grouped, Index(group_size), cfg.train.batch_size);
    write_config_copy(cfg, cfg.output_dir);
    std::string mode = grouped ? "grouped" : "ungrouped";
    std::string path = cfg.output_dir + "/eval_" + split_name(s) + "_" + mode + ".csv";
    write_eval_report(r, ds.inventory, path);
    std::cout << "split=" << split_name(s) << " mode=" << mode << " n=" << r.truth.size()
              << " f1_macro=" << r.report.macro_f1 << '\n';
    return 0;
}

int cmd_saliency(const std::string& config_path, const std::string& checkpoint,
                 const std::string& split, int max_per_class) {
    ExperimentConfig cfg = ExperimentConfig::from_file(config_path);
    Dataset ds = load_experiment_data(cfg);
    sync_geometry(cfg, ds);
    std::string ckpt = checkpoint.empty() ? cfg.output_dir + "/model.ckpt" : checkpoint;
    Model model = load_checkpoint(ckpt, ds);

    Split s = split_from_name(split);
    SaliencyMatrix raw = class_saliency(model, ds, s, max_per_class);
    SaliencyMatrix norm = row_minmax(raw);
    ClusterTree rows = upgma(finite_copy(norm.values));
    ClusterTree cols = upgma(finite_copy(RowMatrix<double>(norm.values.transpose())));

    write_config_copy(cfg, cfg.output_dir);
    const std::string base = cfg.output_dir + "/saliency_" + split_name(s);
    write_saliency_csv(raw, base + "_raw.csv");
    write_saliency_csv(norm, base + "_norm.csv");
    write_cluster_tree(rows, base + "_layer_tree.csv");
    write_cluster_tree(cols, base + "_phoneme_tree.csv");
    write_clustermap_svg(norm, rows, cols, base + "_clustermap.svg");
    std::cout << "saliency grid " << raw.values.rows() << "x" << raw.values.cols()
              << " written under " << base << "_*\n";
    return 0;
}

int cmd_similarity(const std::string& config_path, const std::string& checkpoint,
                   const std::string& split_a, const std::string& split_b, int max_per_class) {
    ExperimentConfig cfg = ExperimentConfig::from_file(config_path);
    Dataset ds = load_experiment_data(cfg);
    sync_geometry(cfg, ds);
    std::string ckpt = checkpoint.empty() ? cfg.output_dir + "/model.ckpt" : checkpoint;
    Model model = load_checkpoint(ckpt, ds);

    Split a = split_from_name(split_a);
    Split b = split_from_name(split_b);
    SimilarityMatrix pe = cross_split_similarity(model, ds, a, b, CorrMetric::pearson,
                                                 max_per_class);
    SimilarityMatrix sp = cross_split_similarity(model, ds, a, b, CorrMetric::spearman,
                                                 max_per_class);
    SimilaritySummary pes = summarize_similarity(pe);
    SimilaritySummary sps = summarize_similarity(sp);

    write_config_copy(cfg, cfg.output_dir);
    const std::string base =
        cfg.output_dir + "/similarity_" + split_name(a) + "_" + split_name(b);
    write_similarity_csv(pe, base + "_pearson.csv");
    write_similarity_csv(sp, base + "_spearman.csv");
    std::ostringstream os;
    os.precision(10);
    os << "metric,mean,stddev,cells,missing\n";
    os << "pearson," << pes.mean << ',' << pes.stddev << ',' << pes.cells << ',' << pes.missing
       << '\n';
    os << "spearman," << sps.mean << ',' << sps.stddev << ',' << sps.cells << ',' << sps.missing
       << '\n';
    write_text_file(base + "_summary.csv", os.str());
    std::cout << summary_line("pearson", pes) << '\n';
    std::cout << summary_line("spearman", sps) << '\n';
    return 0;
}

std::string sanitize_token(const std::string& s) {
    std::string out;
    for (char c : s) {
        bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' ||
                  c == '_';
        out += ok ? c : '-';
    }
    return out;
}

int cmd_sweep(const std::string& config_path, const std::vector<std::string>& axes_raw,
              bool run) {
    struct Axis {
        std::string key;
        std::vector<std::string> values;
    };
    std::vector<Axis> axes;
    for (const std::string& raw : axes_raw) {
        size_t eq = raw.find('=');
        if (eq == std::string::npos || eq == 0 || eq + 1 >= raw.size()) {
            throw UsageError("--set wants key=v1,v2,..., got '" + raw + "'");
        }
        Axis ax;
        ax.key = raw.substr(0, eq);
        std::istringstream vs(raw.substr(eq + 1));
        std::string v;
        while (std::getline(vs, v, ',')) ax.values.push_back(v);
        if (ax.values.empty()) throw UsageError("--set '" + raw + "' lists no values");
        axes.push_back(std::move(ax));
    }
    if (axes.empty()) throw UsageError("sweep needs at least one --set axis");

    KvConfig base = KvConfig::parse_file(config_path);
    {
        KvConfig probe = base;  // surface config errors before touching the disk
        ExperimentConfig::from_kv(probe);
    }
    std::string sweep_root = base.get_string("output.dir", "out");

    std::vector<size_t> idx(axes.size(), 0);
    int exit_code = 0;
    int cells = 0;
    for (;;) {
        KvConfig cell = base;
        std::string name;
        for (size_t i = 0; i < axes.size(); ++i) {
            const std::string& key = axes[i].key;
            const std::string& val = axes[i].values[idx[i]];
            cell.set(key, val);
            std::string short_key = key.substr(key.rfind('.') + 1);
            if (!name.empty()) name += "__";
            name += sanitize_token(short_key) + "-" + sanitize_token(val);
        }
        std::string cell_dir = sweep_root + "/" + name;
        cell.set("output.dir", cell_dir);
        ExperimentConfig cfg = ExperimentConfig::from_kv(cell);
        write_config_copy(cfg, cell_dir);
        std::cout << "cell " << cell_dir << '\n';
        ++cells;
        if (run) {
            int rc = cmd_train(cell_dir + "/config.txt");
            exit_code = std::max(exit_code, rc);
        }
        size_t i = 0;
        while (i < axes.size() && ++idx[i] == axes[i].values.size()) {
            idx[i] = 0;
            ++i;
        }
        if (i == axes.size()) break;
    }
    std::cout << cells << " sweep cells under " << sweep_root << '\n';
    return exit_code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MEG phoneme decoding experiments"};
    app.require_subcommand(1);

    GenerateArgs gen;
    CLI::App* sub_gen = app.add_subcommand("generate", "Write a synthetic dataset");
    sub_gen->add_option("config", gen.config_path, "Optional config file with data.* keys");
    sub_gen->add_option("--out", gen.out, "Output directory");
    sub_gen->add_option("--classes", gen.classes, "Number of phoneme classes");
    sub_gen->add_option("--per-class", gen.per_class, "Training windows per class");
    sub_gen->add_option("--snr", gen.snr, "Template-to-noise power ratio");
    sub_gen->add_option("--seed", gen.seed, "Generator seed");
    sub_gen->add_option("--channels", gen.channels, "Sensor channels per window");
    sub_gen->add_option("--samples", gen.samples, "Time samples per window");
    sub_gen->add_option("--session-drift", gen.session_drift,
                        "Per-channel gain/offset drift of the evaluation session");

    std::string train_config;
    CLI::App* sub_train = app.add_subcommand("train", "Train a model from a config file");
    sub_train->add_option("config", train_config, "Experiment config file")->required();

    std::string eval_config, eval_ckpt, eval_split = "test";
    bool eval_grouped = false, eval_ungrouped = false;
    long long eval_group_size = 100;
    CLI::App* sub_eval = app.add_subcommand("evaluate", "Score a checkpoint on one split");
    sub_eval->add_option("config", eval_config, "Experiment config file")->required();
    sub_eval->add_option("--checkpoint", eval_ckpt, "Checkpoint path (default <out>/model.ckpt)");
    sub_eval->add_option("--split", eval_split, "train|validation|test|holdout");
    sub_eval->add_flag("--grouped", eval_grouped, "Average groups before scoring");
    sub_eval->add_flag("--ungrouped", eval_ungrouped, "Score every window (default)");
    sub_eval->add_option("--group-size", eval_group_size, "Windows per evaluation group");

    std::string sal_config, sal_ckpt, sal_split = "validation";
    int sal_max = 200;
    CLI::App* sub_sal = app.add_subcommand("saliency", "Layer-by-phoneme saliency clustermap");
    sub_sal->add_option("config", sal_config, "Experiment config file")->required();
    sub_sal->add_option("--checkpoint", sal_ckpt, "Checkpoint path (default <out>/model.ckpt)");
    sub_sal->add_option("--split", sal_split, "Split to attribute");
    sub_sal->add_option("--max-per-class", sal_max, "Windows per class cap");

    std::string sim_config, sim_ckpt, sim_a = "validation", sim_b = "test";
    int sim_max = 200;
    CLI::App* sub_sim =
        app.add_subcommand("similarity", "Cross-split saliency similarity matrices");
    sub_sim->add_option("config", sim_config, "Experiment config file")->required();
    sub_sim->add_option("--checkpoint", sim_ckpt, "Checkpoint path (default <out>/model.ckpt)");
    sub_sim->add_option("--split-a", sim_a, "First split");
    sub_sim->add_option("--split-b", sim_b, "Second split (paired with the first)");
    sub_sim->add_option("--max-per-class", sim_max, "Windows per class cap");

    std::string sweep_config;
    std::vector<std::string> sweep_sets;
    bool sweep_run = false;
    CLI::App* sub_sweep = app.add_subcommand("sweep", "Expand a config matrix into cells");
    sub_sweep->add_option("config", sweep_config, "Base experiment config file")->required();
    sub_sweep->add_option("--set", sweep_sets, "Axis as key=v1,v2,... (repeatable)");
    sub_sweep->add_flag("--run", sweep_run, "Train every cell after expanding");

    try {
        app.parse(argc, argv);
        if (*sub_gen) return cmd_generate(gen, *sub_gen);
        if (*sub_train) return cmd_train(train_config);
        if (*sub_eval) {
            if (eval_grouped && eval_ungrouped) {
                throw megdec::UsageError("--grouped and --ungrouped are mutually exclusive");
            }
            return cmd_evaluate(eval_config, eval_ckpt, eval_split, eval_grouped,
                                eval_group_size);
        }
        if (*sub_sal) return cmd_saliency(sal_config, sal_ckpt, sal_split, sal_max);
        if (*sub_sim) return cmd_similarity(sim_config, sim_ckpt, sim_a, sim_b, sim_max);
        if (*sub_sweep) return cmd_sweep(sweep_config, sweep_sets, sweep_run);
        return 2;
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    } catch (const megdec::NumericFault& e) {
        std::cerr << "numeric fault: " << e.what() << '\n';
        return 1;
    } catch (const megdec::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << '\n';
        return 1;
    }
}
