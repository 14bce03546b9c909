// End-to-end checks of the command pipeline: dataset synthesis, classifier
// pretraining, detection, the multiplier sweep, configuration handling, and
// the determinism / no-input-mutation guarantees the commands advertise.

#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "goodat/pipeline.hpp"

using namespace goodat;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("goodat_pipe_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

// Small-but-complete configuration so the whole flow stays fast.
pipeline::RunConfig small_config(const fs::path& root) {
    pipeline::RunConfig cfg = pipeline::default_config();
    cfg.out_dir = (root / "out").string();
    cfg.synth_id_count = 60;
    cfg.synth_ood_count = 30;
    cfg.gin.hidden_dim = 8;
    cfg.gin.epochs = 100;
    cfg.det.epochs = 10;
    return cfg;
}

// Run synth into <root>/data and return a config pointed at the result.
pipeline::RunConfig synth_into(const fs::path& root) {
    pipeline::RunConfig cfg = small_config(root);
    std::ostringstream log;
    pipeline::RunConfig synth_cfg = cfg;
    synth_cfg.out_dir = (root / "data").string();
    pipeline::cmd_synth(synth_cfg, log);
    cfg.id_dir = (root / "data" / "id").string();
    cfg.ood_dir = (root / "data" / "ood").string();
    return cfg;
}

// Digest of every file in a directory tree, for no-mutation checks.
std::vector<std::pair<std::string, std::string>> tree_contents(const fs::path& root) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& entry : fs::recursive_directory_iterator(root))
        if (entry.is_regular_file())
            out.emplace_back(entry.path().lexically_relative(root).string(),
                             slurp(entry.path()));
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

TEST_CASE("synthesis writes both dataset directories with the advertised counts") {
    const fs::path root = fresh_dir("synth_counts");
    pipeline::RunConfig cfg = small_config(root);
    cfg.out_dir = (root / "data").string();
    std::ostringstream log;
    pipeline::cmd_synth(cfg, log);

    auto id = tu::parse_tu_dataset(root / "data" / "id", "synth");
    auto ood = tu::parse_tu_dataset(root / "data" / "ood", "synth");
    REQUIRE(id.graphs.size() == 60);
    REQUIRE(ood.graphs.size() == 30);
    std::set<int> labels;
    for (const auto& g : id.graphs) labels.insert(g.label.value());
    REQUIRE(labels == std::set<int>{0, 1});
    // in-distribution graphs carry both classes in equal halves
    std::size_t class0 = 0;
    for (const auto& g : id.graphs) class0 += *g.label == 0 ? 1 : 0;
    REQUIRE(class0 == 30);
    const std::string summary = slurp(root / "data" / "synth_summary.txt");
    REQUIRE(summary.find("command = synth") != std::string::npos);
    REQUIRE(summary.find("seed.data = 1") != std::string::npos);
}

TEST_CASE("synthesized files round-trip through the parser unchanged") {
    const fs::path root = fresh_dir("synth_roundtrip");
    pipeline::RunConfig cfg = small_config(root);
    cfg.out_dir = (root / "data").string();
    std::ostringstream log;
    pipeline::cmd_synth(cfg, log);

    auto parsed = tu::parse_tu_dataset(root / "data" / "id", "synth");
    REQUIRE(parsed.self_loops_dropped == 0);
    auto direct0 = synth::synth_generate(synth::Kind::id_class0, 30, cfg.synth_min_nodes,
                                         cfg.synth_max_nodes, cfg.seed_data);
    auto direct1 = synth::synth_generate(synth::Kind::id_class1, 30, cfg.synth_min_nodes,
                                         cfg.synth_max_nodes, cfg.seed_data + 1);
    direct0.insert(direct0.end(), direct1.begin(), direct1.end());
    REQUIRE(parsed.graphs.size() == direct0.size());
    for (std::size_t i = 0; i < direct0.size(); ++i) {
        REQUIRE(parsed.graphs[i].n == direct0[i].n);
        REQUIRE(parsed.graphs[i].label == direct0[i].label);
        REQUIRE(parsed.graphs[i].a.data == direct0[i].a.data);
        REQUIRE(parsed.graphs[i].x.data == direct0[i].x.data);
    }
}

TEST_CASE("synthesis is byte-identical across reruns") {
    const fs::path root = fresh_dir("synth_determinism");
    std::ostringstream log;
    for (const char* run : {"a", "b"}) {
        pipeline::RunConfig cfg = small_config(root);
        cfg.out_dir = (root / run).string();
        pipeline::cmd_synth(cfg, log);
    }
    // the dataset payload must not depend on anything but the configuration
    // (the summaries legitimately differ: they echo the two out directories)
    REQUIRE(tree_contents(root / "a" / "id") == tree_contents(root / "b" / "id"));
    REQUIRE(tree_contents(root / "a" / "ood") == tree_contents(root / "b" / "ood"));
}

TEST_CASE("pretraining reaches the contract accuracy and writes a loadable checkpoint") {
    const fs::path root = fresh_dir("pretrain");
    pipeline::RunConfig cfg = synth_into(root);
    std::ostringstream log;
    auto ckpt = pipeline::cmd_pretrain(cfg, log);
    REQUIRE(ckpt.final_train_accuracy >= 0.95);

    auto loaded = gnn::load_checkpoint(fs::path(cfg.out_dir) / "checkpoint.json");
    REQUIRE(loaded.config.hidden_dim == 8);
    REQUIRE(loaded.final_train_accuracy == ckpt.final_train_accuracy);
    const std::string summary = slurp(fs::path(cfg.out_dir) / "pretrain_summary.txt");
    REQUIRE(summary.find("command = pretrain") != std::string::npos);
    REQUIRE(summary.find("final_train_accuracy = ") != std::string::npos);
    REQUIRE(summary.find("train_graphs = 54") != std::string::npos);
}

TEST_CASE("pretraining twice yields byte-identical checkpoints") {
    const fs::path root = fresh_dir("pretrain_determinism");
    pipeline::RunConfig cfg = synth_into(root);
    std::ostringstream log;
    pipeline::cmd_pretrain(cfg, log);
    const std::string first = slurp(fs::path(cfg.out_dir) / "checkpoint.json");
    pipeline::cmd_pretrain(cfg, log);
    REQUIRE(slurp(fs::path(cfg.out_dir) / "checkpoint.json") == first);
}

TEST_CASE("detection writes scores, history, and a summary with the evaluation") {
    const fs::path root = fresh_dir("detect");
    pipeline::RunConfig cfg = synth_into(root);
    std::ostringstream log;
    pipeline::cmd_pretrain(cfg, log);
    cfg.checkpoint = (fs::path(cfg.out_dir) / "checkpoint.json").string();
    auto outcome = pipeline::cmd_detect(cfg, log);

    // 60 ID graphs split 9:1 leaves 6 held out, matched by 6 OOD graphs
    REQUIRE(outcome.scores.size() == 12);
    REQUIRE(outcome.flags.size() == 12);
    REQUIRE(std::count(outcome.flags.begin(), outcome.flags.end(), true) == 6);
    REQUIRE(outcome.history.size() == 10);
    REQUIRE(outcome.auc >= 0.0);
    REQUIRE(outcome.auc <= 1.0);

    const fs::path out(cfg.out_dir);
    const std::string scores = slurp(out / "scores.csv");
    REQUIRE(scores.rfind("graph_index,score,decision,ood_flag\n", 0) == 0);
    REQUIRE(std::count(scores.begin(), scores.end(), '\n') == 13);
    const std::string history = slurp(out / "history.csv");
    REQUIRE(history.rfind("epoch,l_s,l_m,l_d,l_g,mean_overlap\n", 0) == 0);
    REQUIRE(std::count(history.begin(), history.end(), '\n') == 11);
    const std::string summary = slurp(out / "summary.txt");
    REQUIRE(summary.find("command = detect") != std::string::npos);
    REQUIRE(summary.find("auc = ") != std::string::npos);
    REQUIRE(summary.find("eta = ") != std::string::npos);
    REQUIRE(summary.find("runtime_seconds = ") != std::string::npos);
    REQUIRE(summary.find("test_graphs = 12") != std::string::npos);
    REQUIRE_FALSE(fs::exists(out / "embeddings.csv"));
}

TEST_CASE("detection scores are byte-identical across reruns") {
    const fs::path root = fresh_dir("detect_determinism");
    pipeline::RunConfig cfg = synth_into(root);
    std::ostringstream log;
    pipeline::cmd_pretrain(cfg, log);
    cfg.checkpoint = (fs::path(cfg.out_dir) / "checkpoint.json").string();

    pipeline::RunConfig run1 = cfg, run2 = cfg;
    run1.out_dir = (root / "d1").string();
    run2.out_dir = (root / "d2").string();
    pipeline::cmd_detect(run1, log);
    pipeline::cmd_detect(run2, log);
    REQUIRE(slurp(root / "d1" / "scores.csv") == slurp(root / "d2" / "scores.csv"));
    REQUIRE(slurp(root / "d1" / "history.csv") == slurp(root / "d2" / "history.csv"));
}

TEST_CASE("detection leaves its input files untouched") {
    const fs::path root = fresh_dir("detect_no_mutation");
    pipeline::RunConfig cfg = synth_into(root);
    std::ostringstream log;
    pipeline::cmd_pretrain(cfg, log);
    cfg.checkpoint = (fs::path(cfg.out_dir) / "checkpoint.json").string();

    const auto data_before = tree_contents(root / "data");
    const std::string ckpt_before = slurp(cfg.checkpoint);
    cfg.out_dir = (root / "detect_out").string();
    pipeline::cmd_detect(cfg, log);
    REQUIRE(tree_contents(root / "data") == data_before);
    REQUIRE(slurp(cfg.checkpoint) == ckpt_before);
}

TEST_CASE("a zero-epoch detection scores the untrained masks") {
    const fs::path root = fresh_dir("detect_zero_epochs");
    pipeline::RunConfig cfg = synth_into(root);
    std::ostringstream log;
    pipeline::cmd_pretrain(cfg, log);
    cfg.checkpoint = (fs::path(cfg.out_dir) / "checkpoint.json").string();
    cfg.det.epochs = 0;
    auto outcome = pipeline::cmd_detect(cfg, log);
    REQUIRE(outcome.history.empty());
    REQUIRE(outcome.scores.size() == 12);
    REQUIRE(slurp(fs::path(cfg.out_dir) / "history.csv") ==
            "epoch,l_s,l_m,l_d,l_g,mean_overlap\n");
}

TEST_CASE("ablation switches change the detection outcome") {
    const fs::path root = fresh_dir("detect_ablation");
    pipeline::RunConfig cfg = synth_into(root);
    std::ostringstream log;
    pipeline::cmd_pretrain(cfg, log);
    cfg.checkpoint = (fs::path(cfg.out_dir) / "checkpoint.json").string();

    pipeline::RunConfig only_s = cfg;
    only_s.out_dir = (root / "only_s").string();
    only_s.det.loss.enable_lm = false;
    only_s.det.loss.enable_ld = false;
    auto full = pipeline::cmd_detect(cfg, log);
    auto ablated = pipeline::cmd_detect(only_s, log);
    REQUIRE(full.scores.size() == ablated.scores.size());
    REQUIRE(full.scores != ablated.scores);
}

TEST_CASE("a fixed threshold drives the decision column") {
    const fs::path root = fresh_dir("detect_fixed_eta");
    pipeline::RunConfig cfg = synth_into(root);
    std::ostringstream log;
    pipeline::cmd_pretrain(cfg, log);
    cfg.checkpoint = (fs::path(cfg.out_dir) / "checkpoint.json").string();
    cfg.det.eta = detector::EtaMode::fixed(2.0);
    auto outcome = pipeline::cmd_detect(cfg, log);
    REQUIRE(outcome.decisions.eta == 2.0);
    for (std::size_t i = 0; i < outcome.scores.size(); ++i)
        REQUIRE(outcome.decisions.decision[i] == (outcome.scores[i] >= 2.0 ? 1 : 0));
}

TEST_CASE("without a threshold mode the score file leaves decisions blank") {
    const fs::path root = fresh_dir("detect_no_eta");
    pipeline::RunConfig cfg = synth_into(root);
    std::ostringstream log;
    pipeline::cmd_pretrain(cfg, log);
    cfg.checkpoint = (fs::path(cfg.out_dir) / "checkpoint.json").string();
    cfg.det.eta = detector::EtaMode::none();
    auto outcome = pipeline::cmd_detect(cfg, log);
    REQUIRE_FALSE(outcome.decisions.eta.has_value());
    REQUIRE(outcome.decisions.decision.empty());
    const std::string scores = slurp(fs::path(cfg.out_dir) / "scores.csv");
    REQUIRE(scores.find(",,") != std::string::npos);  // empty decision column
}

TEST_CASE("requesting embeddings adds the dump file") {
    const fs::path root = fresh_dir("detect_embeddings");
    pipeline::RunConfig cfg = synth_into(root);
    std::ostringstream log;
    pipeline::cmd_pretrain(cfg, log);
    cfg.checkpoint = (fs::path(cfg.out_dir) / "checkpoint.json").string();
    cfg.dump_embeddings = true;
    pipeline::cmd_detect(cfg, log);
    const std::string dump = slurp(fs::path(cfg.out_dir) / "embeddings.csv");
    REQUIRE(std::count(dump.begin(), dump.end(), '\n') == 12);
}

TEST_CASE("a one-cell sweep reproduces the plain detection evaluation") {
    const fs::path root = fresh_dir("sweep_one_cell");
    pipeline::RunConfig cfg = synth_into(root);
    std::ostringstream log;
    pipeline::cmd_pretrain(cfg, log);
    cfg.checkpoint = (fs::path(cfg.out_dir) / "checkpoint.json").string();

    auto detect_cfg = cfg;
    auto outcome = pipeline::cmd_detect(detect_cfg, log);
    cfg.alpha_grid = {cfg.det.loss.alpha};
    cfg.beta_grid = {cfg.det.loss.beta};
    cfg.out_dir = (root / "sweep_out").string();
    auto table = pipeline::cmd_sweep(cfg, log);
    REQUIRE(table.auc.size() == 1);
    REQUIRE(table.auc[0].size() == 1);
    REQUIRE(table.auc[0][0] == outcome.auc);
}

TEST_CASE("the default sweep grid produces the full five-by-five table") {
    const fs::path root = fresh_dir("sweep_grid");
    pipeline::RunConfig cfg = synth_into(root);
    std::ostringstream log;
    cfg.synth_id_count = 40;  // keep 25 training runs quick
    cfg.det.epochs = 2;
    pipeline::cmd_pretrain(cfg, log);
    cfg.checkpoint = (fs::path(cfg.out_dir) / "checkpoint.json").string();
    auto table = pipeline::cmd_sweep(cfg, log);
    REQUIRE(table.alpha_grid == std::vector<double>{0.1, 0.3, 0.5, 0.7, 0.9});
    REQUIRE(table.beta_grid == std::vector<double>{0.01, 0.03, 0.05, 0.07, 0.09});
    REQUIRE(table.auc.size() == 5);
    for (const auto& row : table.auc) REQUIRE(row.size() == 5);

    const std::string csv = slurp(fs::path(cfg.out_dir) / "sweep.csv");
    REQUIRE(std::count(csv.begin(), csv.end(), '\n') == 6);  // header + 5 rows
    REQUIRE(csv.rfind("alpha\\beta,0.01,", 0) == 0);
}

TEST_CASE("config files apply dotted keys and reject unknown ones") {
    const fs::path root = fresh_dir("config_file");
    {
        std::ofstream out(root / "good.conf");
        out << "# comment line\n";
        out << "detector.epochs = 7\n";
        out << "loss.alpha = 0.25   # trailing comment\n";
        out << "gin.hidden_dim = 16\n";
        out << "detector.eta_fixed = 1.5\n";
        out << "sweep.alphas = 0.1,0.2\n";
        out << "\n";
    }
    pipeline::RunConfig cfg = pipeline::default_config();
    pipeline::load_config_file(root / "good.conf", cfg);
    REQUIRE(cfg.det.epochs == 7);
    REQUIRE(cfg.det.loss.alpha == 0.25);
    REQUIRE(cfg.gin.hidden_dim == 16);
    REQUIRE(cfg.det.eta.kind == detector::EtaMode::Kind::fixed);
    REQUIRE(cfg.det.eta.value == 1.5);
    REQUIRE(cfg.alpha_grid == std::vector<double>{0.1, 0.2});

    {
        std::ofstream out(root / "bad_key.conf");
        out << "detector.epoch = 7\n";
    }
    REQUIRE_THROWS_MATCHES(pipeline::load_config_file(root / "bad_key.conf", cfg), ParseError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("unknown configuration key")));
    {
        std::ofstream out(root / "bad_value.conf");
        out << "detector.epochs = soon\n";
    }
    REQUIRE_THROWS_MATCHES(
        pipeline::load_config_file(root / "bad_value.conf", cfg), ParseError,
        Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("bad_value.conf:1")));
    {
        std::ofstream out(root / "no_equals.conf");
        out << "detector.epochs 7\n";
    }
    REQUIRE_THROWS_AS(pipeline::load_config_file(root / "no_equals.conf", cfg), ParseError);
}

TEST_CASE("malformed grid lists are rejected with a parse error") {
    REQUIRE_THROWS_AS(pipeline::parse_real_list("0.1,,0.3", "--alphas"), ParseError);
    REQUIRE_THROWS_AS(pipeline::parse_real_list("0.1,abc", "--alphas"), ParseError);
    REQUIRE_THROWS_AS(pipeline::parse_real_list("", "--alphas"), ParseError);
    REQUIRE(pipeline::parse_real_list("0.5", "--alphas") == std::vector<double>{0.5});
    REQUIRE(pipeline::parse_real_list("1,2.5,3e-1", "--alphas") ==
            std::vector<double>{1.0, 2.5, 0.3});
}

TEST_CASE("the GOODAT_OUT environment variable overrides the default output directory") {
    ::setenv("GOODAT_OUT", "/tmp/goodat_env_dir", 1);
    pipeline::RunConfig with_env = pipeline::default_config();
    ::unsetenv("GOODAT_OUT");
    pipeline::RunConfig without_env = pipeline::default_config();
    REQUIRE(with_env.out_dir == "/tmp/goodat_env_dir");
    REQUIRE(without_env.out_dir == "goodat_out");
}

TEST_CASE("the config echo lists every effective setting") {
    pipeline::RunConfig cfg = pipeline::default_config();
    cfg.id_dir = "some/id";
    cfg.det.eta = detector::EtaMode::quantile(0.5);
    std::ostringstream echo;
    pipeline::echo_config(echo, cfg);
    const std::string text = echo.str();
    for (const char* key :
         {"data.id_dir = some/id", "gin.hidden_dim = 32", "detector.epochs = 50",
          "detector.eta = quantile(0.5)", "loss.alpha = 0.29999999999999999",
          "loss.beta = 0.050000000000000003", "loss.enable_ls = true",
          "sweep.alphas = 0.10000000000000001,0.29999999999999999,0.5,",
          "seed.data = 1", "seed.pretrain = 2", "seed.detect = 3"})
        REQUIRE(text.find(key) != std::string::npos);
}

TEST_CASE("dataset directories must contain exactly one graph indicator file") {
    const fs::path root = fresh_dir("bad_dataset_dir");
    pipeline::RunConfig cfg = small_config(root);
    cfg.id_dir = (root / "empty").string();
    fs::create_directories(root / "empty");
    std::ostringstream log;
    REQUIRE_THROWS_MATCHES(pipeline::cmd_pretrain(cfg, log), IoError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("graph_indicator")));
    cfg.id_dir = (root / "missing").string();
    REQUIRE_THROWS_AS(pipeline::cmd_pretrain(cfg, log), IoError);
}

TEST_CASE("a dataset missing its labels file fails with the path in the message") {
    const fs::path root = fresh_dir("missing_labels");
    pipeline::RunConfig cfg = synth_into(root);
    fs::remove(root / "data" / "id" / "synth_graph_labels.txt");
    std::ostringstream log;
    REQUIRE_THROWS_MATCHES(
        pipeline::cmd_pretrain(cfg, log), ParseError,
        Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("graph_labels")));
}

TEST_CASE("detection on a mismatched checkpoint names both dimensions") {
    const fs::path root = fresh_dir("detect_dim_mismatch");
    pipeline::RunConfig cfg = synth_into(root);
    std::ostringstream log;
    pipeline::cmd_pretrain(cfg, log);
    cfg.checkpoint = (fs::path(cfg.out_dir) / "checkpoint.json").string();

    // widen the checkpoint's expected features by retraining on padded graphs
    auto id = tu::parse_tu_dataset(fs::path(cfg.id_dir), "synth");
    for (auto& g : id.graphs) {
        Matrix widened(g.n, 3);
        for (std::size_t i = 0; i < g.n; ++i) widened.at(i, 0) = g.x.at(i, 0);
        g.x = widened;
    }
    gnn::GinConfig wide_cfg = cfg.gin;
    wide_cfg.seed = cfg.seed_pretrain;
    auto wide = gnn::pretrain(id.graphs, wide_cfg);
    gnn::save_checkpoint(wide, root / "wide.json");
    cfg.checkpoint = (root / "wide.json").string();
    REQUIRE_THROWS_MATCHES(
        pipeline::cmd_detect(cfg, log), ContractError,
        Catch::Matchers::MessageMatches(
            Catch::Matchers::ContainsSubstring("graph features have dimension 1") &&
            Catch::Matchers::ContainsSubstring("expects 3")));
}
