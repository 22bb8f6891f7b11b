#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "cq/config.hpp"
#include "cq/digest.hpp"

using namespace cq;
using nlohmann::json;
namespace fs = std::filesystem;
using Catch::Matchers::ContainsSubstring;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(is.good());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& tag) {
  fs::path d = fs::temp_directory_path() / ("cq_cfg_" + tag);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

json valid_unravel_config() {
  return json{
      {"model", {{"kind", "qubit_linear"}, {"coupling", 0.5}}},
      {"time", {{"t_final", 0.1}, {"dt", 0.01}, {"checkpoints", 2}}},
      {"unravel", {{"n_traj", 8}}},
  };
}

}  // namespace

TEST_CASE("content digests match published reference values") {
  CHECK(sha256_hex("") ==
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex("abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq") ==
        "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1");
  CHECK(sha256_hex(std::string(1000000, 'a')) ==
        "cdc76e5c9914fb9281a1c7e284d73e67f1809a48a497200e046d39ccc7112cd0");

  const fs::path dir = fresh_dir("digest");
  const fs::path file = dir / "blob.bin";
  {
    std::ofstream os(file, std::ios::binary);
    os << "abc";
  }
  CHECK(sha256_file(file.string()) == sha256_hex("abc"));
  CHECK_THROWS_AS(sha256_file((dir / "missing").string()), IoError);
}

TEST_CASE("a minimal config is filled with defaults") {
  json j = {{"model", {{"kind", "qubit_linear"}}},
            {"grid",
             {{"n_q", 32},
              {"n_p", 32},
              {"q_min", -6.0},
              {"q_max", 6.0},
              {"p_min", -6.0},
              {"p_max", 6.0}}}};
  RunConfig c = parse_config_json(j, RunMode::evolve);
  CHECK(c.params.hbar == 1.0);
  CHECK(c.params.E == 1.0);
  CHECK(c.params.s == 1.0);
  CHECK(c.generator == GeneratorKind::main_cq);
  CHECK(c.model->name() == "qubit_linear");
  CHECK(c.grid.boundary == Boundary::periodic);
  REQUIRE(c.psi.size() == 2);
  CHECK(std::abs(c.psi(0) - Complex{1.0, 0.0}) < 1e-15);
  CHECK(c.t_final == 1.0);
  CHECK(c.checkpoints == 5);
  CHECK(c.out_dir == "out");
  CHECK(c.seed == 0);

  // The echo carries the resolved values for the manifest.
  CHECK(c.resolved.at("params").at("E") == 1.0);
  CHECK(c.resolved.at("generator") == "main_cq");
  CHECK(c.resolved.at("model").at("mass") == 1.0);
}

TEST_CASE("command-line overrides land in the config and its echo") {
  CliOverrides ov;
  ov.out_dir = "elsewhere";
  ov.seed = 99;
  ov.threads = 3;
  json j = valid_unravel_config();
  RunConfig c = parse_config_json(j, RunMode::unravel, ov);
  CHECK(c.out_dir == "elsewhere");
  CHECK(c.seed == 99);
  CHECK(c.threads == 3);
  CHECK(c.resolved.at("seed") == 99);
  // Location and parallelism are not content-determining, so they stay out
  // of the echo.
  CHECK_FALSE(c.resolved.contains("threads"));
  CHECK_FALSE(c.resolved.at("output").contains("dir"));
}

TEST_CASE("the environment variable overrides the output directory") {
  ::setenv("CQLIMIT_OUT", "env_dir", 1);
  json j = valid_unravel_config();
  RunConfig c = parse_config_json(j, RunMode::unravel);
  CHECK(c.out_dir == "env_dir");
  CliOverrides ov;
  ov.out_dir = "flag_dir";
  RunConfig c2 = parse_config_json(j, RunMode::unravel, ov);
  CHECK(c2.out_dir == "flag_dir");
  ::unsetenv("CQLIMIT_OUT");
}

TEST_CASE("config errors name the offending location") {
  SECTION("negative scale parameter") {
    json j = valid_unravel_config();
    j["params"] = {{"E", -1.0}};
    CHECK_THROWS_WITH(parse_config_json(j, RunMode::unravel),
                      ContainsSubstring("/params/E"));
  }
  SECTION("unknown top-level key") {
    json j = valid_unravel_config();
    j["tim"] = json::object();
    CHECK_THROWS_WITH(parse_config_json(j, RunMode::unravel),
                      ContainsSubstring("unknown key 'tim'"));
  }
  SECTION("unknown model key") {
    json j = valid_unravel_config();
    j["model"]["couplng"] = 1.0;
    CHECK_THROWS_WITH(parse_config_json(j, RunMode::unravel),
                      ContainsSubstring("/model: unknown key 'couplng'"));
  }
  SECTION("unknown model kind lists the valid ones") {
    json j = valid_unravel_config();
    j["model"] = {{"kind", "spin_chain"}};
    CHECK_THROWS_WITH(parse_config_json(j, RunMode::unravel),
                      ContainsSubstring("coupled_oscillators"));
  }
  SECTION("unknown generator tag lists the valid ones") {
    json j = valid_unravel_config();
    j["generator"] = "qcel";
    CHECK_THROWS_WITH(parse_config_json(j, RunMode::unravel),
                      ContainsSubstring("main_cq"));
  }
  SECTION("unknown mode name") {
    CHECK_THROWS_WITH(run_mode_from_string("integrate"),
                      ContainsSubstring("/mode"));
  }
  SECTION("mode mismatch between file and command line") {
    json j = valid_unravel_config();
    j["mode"] = "evolve";
    CHECK_THROWS_WITH(parse_config_json(j, RunMode::unravel),
                      ContainsSubstring("command line selected 'unravel'"));
  }
  SECTION("grid required for grid modes") {
    json j = {{"model", {{"kind", "qubit_linear"}}}};
    CHECK_THROWS_WITH(parse_config_json(j, RunMode::evolve),
                      ContainsSubstring("/grid: required"));
  }
  SECTION("unravel requires a positive step") {
    json j = valid_unravel_config();
    j["time"].erase("dt");
    CHECK_THROWS_WITH(parse_config_json(j, RunMode::unravel),
                      ContainsSubstring("/time/dt"));
  }
  SECTION("state vector dimension must match the model") {
    json j = valid_unravel_config();
    j["initial"] = {{"psi", {1.0, 0.0, 0.0}}};
    CHECK_THROWS_WITH(parse_config_json(j, RunMode::unravel),
                      ContainsSubstring("/initial/psi"));
  }
  SECTION("zero state vector is rejected") {
    json j = valid_unravel_config();
    j["initial"] = {{"psi", {0.0, 0.0}}};
    CHECK_THROWS_WITH(parse_config_json(j, RunMode::unravel),
                      ContainsSubstring("nonzero"));
  }
  SECTION("recorded index must be inside the ensemble") {
    json j = valid_unravel_config();
    j["unravel"]["record"] = {8};
    CHECK_THROWS_WITH(parse_config_json(j, RunMode::unravel),
                      ContainsSubstring("/unravel/record"));
  }
  SECTION("unknown observable name") {
    json j = valid_unravel_config();
    j["unravel"]["observables"] = {"sigma_w"};
    CHECK_THROWS_WITH(parse_config_json(j, RunMode::unravel),
                      ContainsSubstring("sigma_w"));
  }
  SECTION("duplicate observable name") {
    json j = valid_unravel_config();
    j["unravel"]["observables"] = {"sigma_z", "sigma_z"};
    CHECK_THROWS_WITH(parse_config_json(j, RunMode::unravel),
                      ContainsSubstring("duplicate"));
  }
  SECTION("matched width conflicts with explicit variances") {
    json j = valid_unravel_config();
    j["unravel"]["init_var_q"] = 0.3;
    CHECK_THROWS_WITH(parse_config_json(j, RunMode::unravel),
                      ContainsSubstring("match_state_width"));
  }
  SECTION("taus required for the convergence mode") {
    json j = {{"model", {{"kind", "qubit_linear"}}},
              {"grid",
               {{"n_q", 32},
                {"n_p", 32},
                {"q_min", -6.0},
                {"q_max", 6.0},
                {"p_min", -6.0},
                {"p_max", 6.0}}}};
    CHECK_THROWS_WITH(parse_config_json(j, RunMode::trotter_convergence),
                      ContainsSubstring("/trotter/taus"));
  }
}

TEST_CASE("the state vector parser accepts real and complex components") {
  json j = valid_unravel_config();
  j["initial"] = {{"psi", json::array({3.0, json::array({0.0, 4.0})})}};
  RunConfig c = parse_config_json(j, RunMode::unravel);
  REQUIRE(c.psi.size() == 2);
  CHECK(std::abs(c.psi(0) - Complex{0.6, 0.0}) < 1e-15);
  CHECK(std::abs(c.psi(1) - Complex{0.0, 0.8}) < 1e-15);
}

TEST_CASE("the unravel width default matches the product-state widths") {
  json j = valid_unravel_config();
  j["params"] = {{"hbar", 0.5}, {"s", 2.0}};
  RunConfig c = parse_config_json(j, RunMode::unravel);
  CHECK(c.init_var_q == Catch::Approx(0.5 * 4.0 / 2.0));
  CHECK(c.init_var_p == Catch::Approx(0.5 / (2.0 * 4.0)));
}

TEST_CASE("the triangle table run writes shells and a self-consistent manifest") {
  const fs::path dir = fresh_dir("cnm");
  json j = {{"cnm", {{"n_max", 6}}}, {"output", {{"dir", dir.string()}}}};
  RunConfig cfg = parse_config_json(j, RunMode::cnm_table);
  std::ostringstream log;
  CHECK(run(cfg, log) == 0);

  const std::string csv = read_file(dir / "cnm_table.csv");
  std::istringstream lines(csv);
  std::vector<std::string> rows;
  for (std::string line; std::getline(lines, line);) rows.push_back(line);
  REQUIRE(rows.size() == 7);
  CHECK(rows[0] == "0");
  CHECK(rows[1] == "1,-1");
  CHECK(rows[6] == "6,14,14,0,-14,-14,-6");

  json manifest = json::parse(read_file(dir / "manifest.json"));
  CHECK(manifest.at("code_version") == kCodeVersion);
  CHECK(manifest.at("config").at("cnm").at("n_max") == 6);
  const std::string recorded = manifest.at("outputs").at("cnm_table.csv");
  CHECK(recorded == sha256_file((dir / "cnm_table.csv").string()));
}

TEST_CASE("positivity runs report the canonical blocks and the control") {
  std::ostringstream log;
  SECTION("canonical blocks are satisfied and saturated") {
    const fs::path dir = fresh_dir("pos_model");
    json j = {{"params", {{"E", 0.8}, {"s", 1.2}}},
              {"output", {{"dir", dir.string()}}}};
    RunConfig cfg = parse_config_json(j, RunMode::check_positivity);
    CHECK(run(cfg, log) == 0);
    json rep = json::parse(read_file(dir / "positivity.json"));
    CHECK(rep.at("satisfied") == true);
    CHECK(rep.at("saturated") == true);
    CHECK(std::abs(rep.at("positivity_margin").get<double>()) < 1e-10);
  }
  SECTION("classical-limit blocks fail the range condition") {
    const fs::path dir = fresh_dir("pos_qcle");
    json j = {{"positivity", {{"matrices", "qcle"}}},
              {"output", {{"dir", dir.string()}}}};
    RunConfig cfg = parse_config_json(j, RunMode::check_positivity);
    CHECK(run(cfg, log) == 2);
    json rep = json::parse(read_file(dir / "positivity.json"));
    CHECK(rep.at("satisfied") == false);
    CHECK(rep.at("range_defect").get<double>() > 0.1);
  }
}

TEST_CASE("a small grid evolution emits a time series and artifacts") {
  const fs::path dir = fresh_dir("evolve");
  json j = {{"model", {{"kind", "qubit_linear"}, {"coupling", 0.5}}},
            {"grid",
             {{"n_q", 48},
              {"n_p", 48},
              {"q_min", -6.0},
              {"q_max", 6.0},
              {"p_min", -6.0},
              {"p_max", 6.0}}},
            {"initial", {{"psi", {1.0, 1.0}}}},
            {"time", {{"t_final", 0.2}, {"checkpoints", 2}}},
            {"output",
             {{"dir", dir.string()}, {"snapshot", true}, {"marginal", true}}}};
  RunConfig cfg = parse_config_json(j, RunMode::evolve);
  std::ostringstream log;
  CHECK(run(cfg, log) == 0);

  const std::string csv = read_file(dir / "timeseries.csv");
  CHECK(static_cast<int>(std::count(csv.begin(), csv.end(), '\n')) == 4);
  CHECK(csv.rfind("t,total_trace,", 0) == 0);

  json summary = json::parse(read_file(dir / "summary.json"));
  CHECK(summary.at("final").at("total_trace").get<double>() ==
        Catch::Approx(1.0).margin(1e-6));
  CHECK(summary.at("step").at("steps").get<long>() > 0);
  CHECK(fs::exists(dir / "final_state.cqf"));
  CHECK(fs::exists(dir / "final_marginal.csv"));

  json manifest = json::parse(read_file(dir / "manifest.json"));
  CHECK(manifest.at("outputs").size() == 4);
  CHECK(manifest.at("outputs").at("final_state.cqf") ==
        sha256_file((dir / "final_state.cqf").string()));
}

TEST_CASE("unravel runs are byte-reproducible across directories") {
  json j = valid_unravel_config();
  j["unravel"]["observables"] = {"sigma_z"};
  j["unravel"]["record"] = {0, 3};
  j["seed"] = 7;

  auto run_into = [&](const std::string& tag) {
    const fs::path dir = fresh_dir(tag);
    CliOverrides ov;
    ov.out_dir = dir.string();
    RunConfig cfg = parse_config_json(j, RunMode::unravel, ov);
    std::ostringstream log;
    REQUIRE(run(cfg, log) == 0);
    return dir;
  };
  const fs::path a = run_into("unravel_a");
  const fs::path b = run_into("unravel_b");

  CHECK(read_file(a / "summary.json") == read_file(b / "summary.json"));
  CHECK(read_file(a / "trajectories.csv") == read_file(b / "trajectories.csv"));
  // Manifests omit the output location, so they must agree byte for byte —
  // and through the recorded digests that certifies every other artifact.
  CHECK(read_file(a / "manifest.json") == read_file(b / "manifest.json"));

  json summary = json::parse(read_file(a / "summary.json"));
  REQUIRE(summary.at("checkpoints").size() == 3);
  const auto& last = summary.at("checkpoints").back();
  CHECK(last.at("observables").contains("sigma_z"));
  CHECK(last.at("mean_purity").get<double>() > 0.9);

  const std::string traj = read_file(a / "trajectories.csv");
  CHECK(traj.rfind("t,trajectory,q,p,psi0_re,psi0_im,psi1_re,psi1_im", 0) ==
        0);
  // Two recorded trajectories, three checkpoint rows each, plus the header.
  CHECK(static_cast<int>(std::count(traj.begin(), traj.end(), '\n')) == 7);
}

TEST_CASE("a file-based config read reports missing files and bad JSON") {
  CHECK_THROWS_AS(parse_config("/nonexistent/config.json", RunMode::evolve),
                  IoError);
  const fs::path dir = fresh_dir("badjson");
  const fs::path file = dir / "broken.json";
  {
    std::ofstream os(file);
    os << "{ not json";
  }
  CHECK_THROWS_WITH(parse_config(file.string(), RunMode::evolve),
                    ContainsSubstring("not valid JSON"));
}
