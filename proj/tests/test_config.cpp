#include <catch_amalgamated.hpp>

#include "tide/checkpoint.hpp"
#include "tide/config.hpp"

#include <filesystem>
#include <fstream>

using namespace tide;

TEST_CASE("defaults reproduce the published small-image configuration") {
  RunConfig c;
  REQUIRE(c.model.d_model == 256);
  REQUIRE(c.model.n_e() == 204);  // floor(0.8 * 256)
  REQUIRE(c.model.n_i() == 52);
  REQUIRE(c.model.steps == 50);
  REQUIRE(c.model.tau_e == 20.0);
  REQUIRE(c.model.tau_i == 5.0);
  REQUIRE(c.model.dt == 1.0);
  REQUIRE(c.model.k_wta == 5);
  REQUIRE(c.model.d_ee == 256);
  REQUIRE(c.model.d_ei == 128);
  REQUIRE(c.model.d_ii == 64);
  REQUIRE(c.model.n_heads == 8);
  REQUIRE(c.model.nlm_window == 25);
  REQUIRE(c.model.nlm_hidden == 4);
  REQUIRE(c.model.head_hidden == 256);
  REQUIRE(c.model.dropout == 0.1);
  REQUIRE(c.loss.lambda_ei == 1e-2);
  REQUIRE(c.loss.lambda_game == 1e-3);
  REQUIRE(c.loss.lambda_sync == 1e-4);
  REQUIRE(c.loss.lambda_spec == 0.0);  // off for small-image configs
  REQUIRE(c.loss.tau_ee == 15.0);
  REQUIRE(c.loss.tau_ii == 7.0);
  REQUIRE(c.loss.rho_star == 4.0);
  REQUIRE(c.loss.t_s == 1000);
  REQUIRE(c.loss.t_w == 5000);
  REQUIRE(c.train.lr == 1e-3);
  REQUIRE(c.train.warmup == 1000);
  REQUIRE(c.train.total_steps == 50000);
  REQUIRE(c.train.batch == 64);
  REQUIRE(c.train.weight_decay == 1e-4);
  REQUIRE(c.train.clip == 1.0);
  REQUIRE(c.train.seed == 42);
  REQUIRE(c.model.tbptt_k == 0);
  REQUIRE(c.data.mean == std::vector<double>{0.1307});
  REQUIRE(c.data.std_dev == std::vector<double>{0.3081});
}

TEST_CASE("config round-trips through its canonical dump") {
  RunConfig c;
  c.model.d_model = 64;
  c.model.steps = 10;
  c.train.lr = 5e-4;
  c.data.dataset = "bars";
  RunConfig back = parse_config_string(dump_config(c));
  REQUIRE(dump_config(back) == dump_config(c));
  REQUIRE(config_hash(back) == config_hash(c));
}

TEST_CASE("unknown keys and malformed values are rejected") {
  REQUIRE_THROWS_AS(parse_config_string("[model]\nnot_a_key = 3\n"), ConfigError);
  REQUIRE_THROWS_AS(parse_config_string("[nosuch]\nd_model = 3\n"), ConfigError);
  REQUIRE_THROWS_AS(parse_config_string("[model]\nd_model = abc\n"), ConfigError);
  REQUIRE_THROWS_AS(parse_config_string("d_model = 3\n"), ConfigError);
  REQUIRE_THROWS_AS(parse_config_string("[loss]\ngame_variant = nope\n"), ConfigError);
  REQUIRE_NOTHROW(parse_config_string("# comment\n[model]\nd_model = 32\n"));
}

TEST_CASE("seed flows from the train section into the model") {
  RunConfig c = parse_config_string("[train]\nseed = 7\n");
  REQUIRE(c.train.seed == 7);
  REQUIRE(c.model.seed == 7);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "tide_ckpt_test";
  fs::create_directories(dir);
  const std::string path = (dir / "model.tide").string();
  const std::string path2 = (dir / "model2.tide").string();

  Parameter p1{"a.w", ParamGroup::recurrent, Tensor({3, 2}, 1.5)};
  Parameter p2{"b.w", ParamGroup::head, Tensor({4}, -0.25)};
  Buffer b1{"m", Tensor({5}, 0.125)};
  ParamRegistry reg;
  reg.add(&p1);
  reg.add(&p2);
  reg.add(&b1);
  AdamW opt;
  opt.attach(reg);
  opt.m[0].fill(0.5);
  opt.v[1].fill(0.75);
  opt.step_count = 17;

  CheckpointMeta meta;
  meta.config_text = "[model]\nd_model = 8\n";
  meta.seed = 42;
  meta.step = 123;
  save_checkpoint(path, meta, reg, &opt);

  // perturb, reload, and confirm exact restoration
  p1.value.fill(0.0);
  opt.m[0].fill(0.0);
  opt.step_count = 0;
  CheckpointMeta back = load_checkpoint(path, reg, &opt);
  REQUIRE(back.step == 123);
  REQUIRE(back.seed == 42);
  REQUIRE(back.config_text == meta.config_text);
  REQUIRE(p1.value[0] == 1.5);
  REQUIRE(opt.m[0][0] == 0.5);
  REQUIRE(opt.step_count == 17);

  // save -> load -> save yields identical bytes
  save_checkpoint(path2, back, reg, &opt);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  REQUIRE(s1 == s2);

  // shape mismatch reports a config/checkpoint disagreement
  Parameter wrong{"a.w", ParamGroup::recurrent, Tensor({2, 2})};
  ParamRegistry reg2;
  reg2.add(&wrong);
  reg2.add(&p2);
  reg2.add(&b1);
  AdamW opt2;
  opt2.attach(reg2);
  REQUIRE_THROWS_AS(load_checkpoint(path, reg2, &opt2), CheckpointError);
  fs::remove_all(dir);
}
