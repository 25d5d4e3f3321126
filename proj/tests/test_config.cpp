#include "doctest.h"

#include <fstream>
#include <set>

#include "mtsmae/config.hpp"
#include "support.hpp"

using namespace mtsmae;
using namespace testing;

namespace {

std::filesystem::path write_file(const std::string& name, const std::string& text) {
  const auto dir = std::filesystem::temp_directory_path() / "mtsmae_config_test";
  std::filesystem::create_directories(dir);
  const auto p = dir / name;
  std::ofstream(p) << text;
  return p;
}

}  // namespace

TEST_CASE("profiles") {
  const auto full = RunConfig::defaults(Profile::Full);
  CHECK(full.model.d_model == 512);
  CHECK(full.model.n_heads == 8);
  CHECK(full.model.enc_layers == 3);
  CHECK(full.model.input_len == 784);
  CHECK(full.pretrain.mask_ratio == 0.85);
  CHECK(full.finetune.lr == 1e-4);

  const auto desk = RunConfig::defaults(Profile::Desk);
  CHECK(desk.model == ModelConfig::desk());
  CHECK(desk.pretrain.base_lr == full.pretrain.base_lr);

  CHECK(parse_profile("desk") == Profile::Desk);
  CHECK(parse_profile("full") == Profile::Full);
  CHECK(error_kind([] { parse_profile("huge"); }) == ErrorKind::Config);
}

TEST_CASE("keys set and print") {
  RunConfig c;
  c.set("model.d_model", "64");
  c.set("pretrain.mask_ratio", "0.75");
  c.set("finetune.lr_decay", "0.9");
  c.set("data.split", "rows:100,20,30");
  c.set("eval.plot_window", "3");
  c.set("dtype", "f64");
  c.set("log.wall_ms", "false");
  CHECK(c.model.d_model == 64);
  CHECK(c.pretrain.mask_ratio == 0.75);
  CHECK(c.finetune.lr_decay == 0.9);
  CHECK(c.data.split.unit == SplitSpec::Unit::Rows);
  CHECK(c.eval.plot_window == std::size_t{3});
  CHECK(c.dtype == DType::Float64);
  CHECK_FALSE(c.log_wall_ms);
  c.set("eval.plot_window", "all");
  CHECK_FALSE(c.eval.plot_window.has_value());

  CHECK(error_text([&] { c.set("model.dmodel", "3"); }).find("model.dmodel") != std::string::npos);
  CHECK(error_kind([&] { c.set("model.dmodel", "3"); }) == ErrorKind::Config);
  CHECK(error_kind([&] { c.set("model.d_model", "wide"); }) == ErrorKind::Config);
  CHECK(error_kind([&] { c.set("model.d_model", "-4"); }) == ErrorKind::Config);
  CHECK(error_kind([&] { c.set("dtype", "int8"); }) == ErrorKind::Config);
  CHECK(error_kind([&] { c.set("log.wall_ms", "maybe"); }) == ErrorKind::Config);
  // Derived from the data, not configurable.
  CHECK(error_kind([&] { c.set("model.d_x", "3"); }) == ErrorKind::Config);
}

TEST_CASE("files report the offending line") {
  const auto p = write_file("typo.cfg", "# comment\nseed = 4\n\nmodel.d_modle = 32\n");
  const auto msg = error_text([&] { load_run_config(Profile::Desk, p); });
  CHECK(msg.find("typo.cfg:4") != std::string::npos);
  CHECK(msg.find("model.d_modle") != std::string::npos);

  const auto bad = write_file("bad.cfg", "seed = 4\npretrain.epochs = many\n");
  CHECK(error_text([&] { load_run_config(Profile::Desk, bad); }).find("bad.cfg:2") != std::string::npos);

  CHECK(error_kind([] { load_run_config(Profile::Desk, std::filesystem::path("/no/such/file.cfg")); }) ==
        ErrorKind::Io);
}

TEST_CASE("layering: profile, then file, then overrides") {
  const auto p = write_file("layer.cfg", "seed = 4\nmodel.d_model = 16\nmodel.n_heads = 4\n");
  const auto c = load_run_config(Profile::Desk, p, {{"seed", "9"}});
  CHECK(c.seed == 9);
  CHECK(c.model.d_model == 16);
  CHECK(c.model.n_heads == 4);
  CHECK(c.model.d_ff == ModelConfig::desk().d_ff);
}

TEST_CASE("resolved text round-trips") {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int> small(1, 9);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    RunConfig c = RunConfig::defaults(trial % 2 ? Profile::Desk : Profile::Full);
    c.seed = rng();
    c.dtype = trial % 3 ? DType::Float32 : DType::Float64;
    c.model.d_model = static_cast<std::size_t>(small(rng) * 8);
    c.model.enc_layers = static_cast<std::size_t>(small(rng));
    c.model.dropout = unit(rng) * 0.5;
    c.pretrain.base_lr = unit(rng) * 1e-2;
    c.pretrain.mask_ratio = unit(rng);
    c.finetune.lr_decay = unit(rng);
    c.finetune.patience = static_cast<std::size_t>(small(rng));
    c.data.csv = trial % 4 ? "data/a b.csv" : "";
    c.data.split = SplitSpec::parse(trial % 2 ? "ratio:0.7,0.1,0.2" : "months:12,4,4");
    c.eval.plot_window = trial % 5 ? std::optional<std::size_t>{} : std::optional<std::size_t>{7};
    c.log_wall_ms = trial % 2 == 0;

    const auto text = c.to_text();
    const auto back = RunConfig::from_text(text, "mem");
    CHECK(back.to_text() == text);
    CHECK(back.seed == c.seed);
    CHECK(back.model.dropout == c.model.dropout);
    CHECK(back.pretrain.base_lr == c.pretrain.base_lr);
    CHECK(back.pretrain.mask_ratio == c.pretrain.mask_ratio);
    CHECK(back.finetune.lr_decay == c.finetune.lr_decay);
    CHECK(back.data.csv == c.data.csv);
  }
}

TEST_CASE("schema lists every key once, each accepted by set") {
  const auto& schema = config_schema();
  std::set<std::string> seen;
  RunConfig c;
  const auto text = c.to_text();
  for (const auto& k : schema) {
    CHECK(seen.insert(k.key).second);
    CHECK_FALSE(k.description.empty());
    CHECK(text.find(k.key + " = ") != std::string::npos);
  }
  CHECK(seen.size() == schema.size());
  for (const auto& e : parse_key_values(text, "mem")) CHECK_NOTHROW(c.set(e.key, e.value));
  for (const char* key : {"seed", "model.input_len", "pretrain.mask_ratio", "finetune.patience", "data.csv",
                          "eval.jobs", "model.pretrain_dec_layers", "model.finetune_dec_layers"}) {
    CHECK(seen.count(key) == 1);
  }
}

TEST_CASE("validation") {
  auto c = RunConfig::defaults(Profile::Desk);
  CHECK(error_text([&] { c.validate(); }).find("data.csv") != std::string::npos);
  c.data.synth = "spec.txt";
  CHECK_NOTHROW(c.validate());
  c.eval.jobs = 0;
  CHECK(error_kind([&] { c.validate(); }) == ErrorKind::Config);
  c.eval.jobs = 1;
  c.model.input_len = 50;  // not a multiple of p^2
  CHECK(error_kind([&] { c.validate(); }) == ErrorKind::Config);
}
