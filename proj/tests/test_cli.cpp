#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fsi2p/runner.hpp"
#include "support.hpp"

using namespace fsi2p;

namespace {

std::filesystem::path fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("fsi2p_cli_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::vector<std::string>> csv_rows(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::vector<std::vector<std::string>> rows;
  for (std::string line; std::getline(in, line);) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

RunConfig tiny_config(const std::filesystem::path& root) {
  RunConfig c;
  c.dataset = (root / "data").string();
  c.out = (root / "run").string();
  c.count = 10;
  c.points = 16;
  c.height = 32;
  c.width = 32;
  c.input_channels = 8;
  c.channels = 8;
  c.state_dim = 4;
  c.heads = 2;
  c.modulation_hidden = 8;
  c.policy_hidden = 8;
  c.fine_channels = 8;
  c.top_k = 8;
  c.steps = 3;
  c.lr = 0.05;
  c.checkpoint_every = 2;
  return c;
}

ModelParams params_of(const RunConfig& c, const std::filesystem::path& ckpt) {
  const Model model(c);
  ModelParams p = model.init(c.seed + 1000);
  assign_params(p, load_checkpoint(ckpt));
  return p;
}

bool same_params(const ModelParams& a, const ModelParams& b) {
  std::vector<Eigen::VectorXd> va, vb;
  visit_params(a, [&](const std::string&, const Tensor& t) { va.push_back(t.data()); });
  visit_params(b, [&](const std::string&, const Tensor& t) { vb.push_back(t.data()); });
  return va == vb;
}

}  // namespace

TEST_CASE("config text parses with comments and overrides") {
  const RunConfig c = parse_config("# comment\nseed = 7\n  lr=0.25  # trailing\n\nordering = column\nmode = hard\n");
  CHECK(c.seed == 7);
  CHECK(c.lr == 0.25);
  CHECK(c.ordering == Ordering::column);
  CHECK(c.mode == SceneMode::hard);
  CHECK(c.zeta == 10.0);
  const RunConfig d = parse_config("seed = 9", c);
  CHECK(d.seed == 9);
  CHECK(d.lr == 0.25);
}

TEST_CASE("config defaults follow the documented values") {
  const RunConfig c;
  CHECK(c.channels == 32);
  CHECK(c.window_a == 8);
  CHECK(c.window_b == 4);
  CHECK(c.window_c == 2);
  CHECK(c.top_k == 128);
  CHECK(c.tau == 0.6);
  CHECK(c.zeta == 10.0);
  CHECK(c.delta_p == 0.1);
  CHECK(c.delta_n == 1.4);
  CHECK(c.xi1 == 1.0);
  CHECK(c.xi2 == 1.0);
  CHECK(c.reward_delta == 1e-6);
  CHECK(c.baseline_momentum == 0.1);
  CHECK(c.ransac_iterations == 500);
  CHECK(c.ransac_threshold == 2.0);
  CHECK(c.lr == 1e-3);
  CHECK(c.momentum == 0.9);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("config errors are reported") {
  CHECK_THROWS_AS(parse_config("sed = 1"), ConfigError);
  CHECK_THROWS_AS(parse_config("seed = x"), ConfigError);
  CHECK_THROWS_AS(parse_config("seed"), ConfigError);
  CHECK_THROWS_AS(parse_config("ordering = spiral"), ConfigError);
  CHECK_THROWS_AS(parse_config("lr = 1.0.0"), ConfigError);
  try {
    (void)parse_config("seed = 1\nbogus_key = 3\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("bogus_key") != std::string::npos);
  }
  for (const char* bad : {"delta_p = 2", "xi1 = -1", "fixed_depth = 4", "baseline_momentum = 0",
                          "top_k = 0", "window_a = 3", "reward_delta = 0"}) {
    CAPTURE(bad);
    CHECK_THROWS_AS(parse_config(bad).validate(), ConfigError);
  }
  CHECK_THROWS_AS(load_config("/nonexistent/fsi2p.cfg"), IoError);
}

TEST_CASE("formatted config parses back to the same config") {
  RunConfig c;
  c.seed = 12;
  c.lr = 0.123456789012345;
  c.ordering = Ordering::reverse;
  c.dataset = "some/where";
  c.mode = SceneMode::hard;
  const std::string text = format_config(c);
  CHECK(format_config(parse_config(text)) == text);
  CHECK(parse_config(text).lr == c.lr);
}

TEST_CASE("log-log slope calibrates on exact power laws") {
  const std::vector<double> tokens{256, 512, 1024, 2048, 4096};
  std::vector<double> lin, quad;
  for (double t : tokens) {
    lin.push_back(3e-7 * t);
    quad.push_back(2e-9 * t * t);
  }
  CHECK(std::abs(loglog_slope(tokens, lin) - 1.0) <= 0.01);
  CHECK(std::abs(loglog_slope(tokens, quad) - 2.0) <= 0.01);
  CHECK_THROWS_AS(loglog_slope({1.0}, {1.0}), DomainError);
  CHECK_THROWS_AS(loglog_slope({1.0, 2.0}, {1.0, 0.0}), DomainError);
}

TEST_CASE("checkpoint round trip preserves the forward pass bit for bit") {
  const auto root = fresh_dir("ckpt");
  const RunConfig c = tiny_config(root);
  std::filesystem::create_directories(root);
  const Model model(c);
  ModelParams p = model.init(3);
  Rng rng(5);
  visit_params(p, [&](const std::string&, Tensor& t) { t = test::randn(t.shape(), rng, 0.1); });
  std::map<std::string, Tensor> mom;
  mom.emplace("image_in.w", test::randn(p.image_in_w.shape(), rng));
  save_checkpoint(root / "c.bin", make_checkpoint(p, mom, 2.5, 17), c);
  const Checkpoint loaded = load_checkpoint(root / "c.bin");
  CHECK(loaded.baseline == 2.5);
  CHECK(loaded.step == 17);
  CHECK(momentum_buffers(loaded).at("image_in.w").data() == mom.at("image_in.w").data());
  CHECK(std::filesystem::exists(root / "c.bin.cfg"));
  CHECK(format_config(load_config(root / "c.bin.cfg")) == format_config(c));

  ModelParams q = model.init(4);
  assign_params(q, loaded);
  CHECK(same_params(p, q));
  const SampleInputs in = prepare_sample(model, gen_scene(c.scene_spec(), 1));
  Rng r1(0), r2(0);
  const ForwardOutput a = forward(model, p, in, {DepthMode::fixed, 2}, r1);
  const ForwardOutput b = forward(model, q, in, {DepthMode::fixed, 2}, r2);
  CHECK(a.unified.data() == b.unified.data());
  std::filesystem::remove_all(root);
}

TEST_CASE("checkpoint errors name the problem") {
  const auto root = fresh_dir("ckpt_err");
  std::filesystem::create_directories(root);
  RunConfig c = tiny_config(root);
  const ModelParams p = Model(c).init(1);
  save_checkpoint(root / "c.bin", make_checkpoint(p, {}, 0.0, 0), c);

  c.channels = 16;
  ModelParams wider = Model(c).init(1);
  try {
    assign_params(wider, load_checkpoint(root / "c.bin"));
    FAIL("expected a shape error");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("image_in.w") != std::string::npos);
  }
  std::ofstream(root / "junk.bin", std::ios::binary) << "NOT A CHECKPOINT";
  CHECK_THROWS_AS(load_checkpoint(root / "junk.bin"), IoError);
  CHECK_THROWS_AS(load_checkpoint(root / "missing.bin"), IoError);
  const std::string bytes = read_text(root / "c.bin");
  std::ofstream(root / "cut.bin", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  CHECK_THROWS_AS(load_checkpoint(root / "cut.bin"), IoError);
  std::filesystem::remove_all(root);
}

TEST_CASE("zero-step training writes the initialisation and a bare header") {
  const auto root = fresh_dir("zero");
  RunConfig c = tiny_config(root);
  c.steps = 0;
  run_gen_data(c);
  const TrainResult r = run_train(c);
  CHECK(r.rows.empty());
  CHECK(read_text(r.csv) == std::string(kTrainCsvHeader) + "\n");
  CHECK(same_params(params_of(c, r.checkpoint), Model(c).init(c.seed)));
  CHECK(load_checkpoint(r.checkpoint).step == 0);
  std::filesystem::remove_all(root);
}

TEST_CASE("training is deterministic and the CSV schema is stable") {
  const auto root = fresh_dir("det");
  RunConfig c = tiny_config(root);
  run_gen_data(c);
  const TrainResult a = run_train(c);
  const auto rows_a = csv_rows(a.csv);
  const TrainResult b = run_train(c);
  const auto rows_b = csv_rows(b.csv);
  REQUIRE(rows_a.size() == 4);
  REQUIRE(rows_b.size() == 4);
  CHECK(rows_a[0] == rows_b[0]);
  const std::vector<std::string> header = rows_a[0];
  CHECK(header.size() == 10);
  for (const char* col : {"step", "loss_coarse", "loss_fine", "loss_rl", "reward", "baseline",
                          "depth_a", "depth_b", "depth_c", "wall_ms"}) {
    CHECK(std::count(header.begin(), header.end(), std::string(col)) == 1);
  }
  for (std::size_t i = 1; i < rows_a.size(); ++i) {
    REQUIRE(rows_a[i].size() == 10);
    for (std::size_t k = 0; k + 1 < 10; ++k) CHECK(rows_a[i][k] == rows_b[i][k]);
  }
  CHECK(same_params(a.params, b.params));
  CHECK(load_checkpoint(a.checkpoint).step == 3);
  std::filesystem::remove_all(root);
}

TEST_CASE("non-finite losses abort with the step and term") {
  const auto root = fresh_dir("nan");
  RunConfig c = tiny_config(root);
  c.lr = 1e12;
  c.steps = 20;
  run_gen_data(c);
  try {
    (void)run_train(c);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("training step") != std::string::npos);
    CHECK(msg.find("not finite") != std::string::npos);
  }
  std::filesystem::remove_all(root);
}

TEST_CASE("evaluation aggregates per-sample rows") {
  const auto root = fresh_dir("eval");
  RunConfig c = tiny_config(root);
  run_gen_data(c);
  const TrainResult t = run_train(c);
  const EvalReport r = run_eval(c, t.checkpoint);
  const auto rows = csv_rows(std::filesystem::path(c.out) / "eval.csv");
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].size() == 12);
  double ir = 0.0, rr = 0.0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    ir += std::stod(rows[i][1]);
    rr += std::stod(rows[i][4]);
  }
  CHECK(r.inlier_ratio == doctest::Approx(ir / 2).epsilon(1e-8));
  CHECK(r.registration_recall == doctest::Approx(rr / 2).epsilon(1e-8));
  Index total = 0;
  for (Index h : r.depth_histogram) total += h;
  CHECK(total == 6);
  CHECK(read_text(std::filesystem::path(c.out) / "eval_summary.txt") == r.summary());

  RunConfig empty = c;
  CHECK_THROWS_AS(evaluate(empty, t.params, {}), ConfigError);
  empty.dataset = (root / "nowhere").string();
  CHECK_THROWS_AS(run_eval(empty, t.checkpoint), IoError);
  std::filesystem::remove_all(root);
}

TEST_CASE("fixed depth evaluation reports that depth everywhere") {
  const auto root = fresh_dir("fixed");
  RunConfig c = tiny_config(root);
  c.steps = 0;
  c.fixed_depth = 1;
  run_gen_data(c);
  const EvalReport r = run_eval(c, run_train(c).checkpoint);
  CHECK(r.depth_histogram[1] == 6);
  std::filesystem::remove_all(root);
}
