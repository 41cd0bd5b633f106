#include "support/doctest_torch.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <sys/wait.h>

#include "scinet/cli.hpp"
#include "scinet/imaging.hpp"
#include "support/synthetic.hpp"

using namespace scinet;

namespace {

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;
};

Outcome run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "scinet");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Outcome o;
  o.code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  o.out = out.str();
  o.err = err.str();
  return o;
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

// One tiny training run shared by the stylize/grid cases.
struct TrainedModel {
  testing::TempDir dir{"cli"};
  std::filesystem::path checkpoint;
  Outcome train;

  TrainedModel() {
    testing::write_contents(dir / "content", 2, 64);
    testing::write_styles(dir / "style", 2, 64);
    write_text(dir / "run.toml", R"([data]
content_dir = "content"
style_dir = "style"
image_size = 64
crop_size = 64

[model]
width_divisor = 8
heads = 4
embed_dim = 32
proj_hidden = 16
proj_dim = 8

[train]
grid_size = 2
steps = 2
checkpoint_every = 0
out_dir = "out"
)");
    train = run_cli({"train", "--config", (dir / "run.toml").string()});
    checkpoint = dir / "out" / "final.ckpt";
  }
};

TrainedModel& model() {
  static TrainedModel m;
  return m;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("usage errors") {
  CHECK(run_cli({}).code == cli::kExitUsage);
  CHECK(run_cli({"frobnicate"}).code == cli::kExitUsage);
  CHECK(run_cli({"verify", "--bogus"}).code == cli::kExitUsage);
  CHECK(run_cli({"stylize", "--content", "a.png"}).code == cli::kExitUsage);
  CHECK(run_cli({"--help"}).code == cli::kExitOk);
}

TEST_CASE("verify") {
  auto ok = run_cli({"verify"});
  CHECK(ok.code == cli::kExitOk);
  CHECK(ok.out.find("20/20 checks passed") != std::string::npos);
  auto broken = run_cli({"verify", "--epsilon", "0"});
  CHECK(broken.code == cli::kExitFailure);
  CHECK(broken.out.find("sigma_positive") != std::string::npos);
  CHECK(broken.out.find("19/20 checks passed") != std::string::npos);
}

TEST_CASE("train") {
  auto& m = model();
  CHECK_MESSAGE(m.train.code == cli::kExitOk, m.train.err);
  CHECK(m.train.out.find("step 2/2") != std::string::npos);
  CHECK(m.train.out.find("finished 2 steps") != std::string::npos);
  CHECK(std::filesystem::exists(m.checkpoint));
  CHECK(std::filesystem::exists(m.dir / "out" / "metrics.jsonl"));
}

TEST_CASE("train reports bad configs") {
  testing::TempDir dir("cli-config");
  write_text(dir / "missing.toml", "[data]\ncontent_dir = \"nowhere\"\nstyle_dir = \"nowhere\"\n");
  auto missing = run_cli({"train", "--config", (dir / "missing.toml").string()});
  CHECK(missing.code == cli::kExitUsage);
  CHECK(missing.err.find((dir / "nowhere").string()) != std::string::npos);

  write_text(dir / "typo.toml", "[data]\nimage_size = 64\n[train]\nstepz = 3\n");
  auto typo = run_cli({"train", "--config", (dir / "typo.toml").string()});
  CHECK(typo.code == cli::kExitUsage);
  CHECK(typo.err.find("typo.toml:4: unknown field train.stepz") != std::string::npos);

  std::filesystem::create_directories(dir / "empty_c");
  std::filesystem::create_directories(dir / "empty_s");
  write_text(dir / "empty.toml", "[data]\ncontent_dir = \"empty_c\"\nstyle_dir = \"empty_s\"\n");
  auto empty = run_cli({"train", "--config", (dir / "empty.toml").string()});
  CHECK(empty.code == cli::kExitUsage);
  CHECK(empty.err.find("empty_c") != std::string::npos);

  CHECK(run_cli({"train", "--config", (dir / "absent.toml").string()}).code == cli::kExitUsage);
}

TEST_CASE("stylize") {
  auto& m = model();
  REQUIRE(std::filesystem::exists(m.checkpoint));
  const auto content = (m.dir / "content" / "content_0.png").string();
  const auto style = (m.dir / "style" / "style_1.png").string();
  const auto a = m.dir / "results" / "a.png";
  const auto b = m.dir / "results" / "b.png";
  auto first = run_cli({"stylize", "--content", content, "--style", style, "--checkpoint",
                        m.checkpoint.string(), "--out", a.string()});
  CHECK_MESSAGE(first.code == cli::kExitOk, first.err);
  auto img = load_image(a);
  CHECK(img.sizes() == torch::IntArrayRef({1, 3, 64, 64}));
  run_cli({"stylize", "--content", content, "--style", style, "--checkpoint", m.checkpoint.string(),
           "--out", b.string()});
  CHECK(torch::equal(load_image(b), img));

  SUBCASE("checkpoint from the environment") {
    ::setenv(cli::kCheckpointDirEnv, (m.dir / "out").string().c_str(), 1);
    auto env = run_cli({"stylize", "--content", content, "--style", style, "--out", b.string()});
    ::unsetenv(cli::kCheckpointDirEnv);
    CHECK(env.code == cli::kExitOk);
    CHECK(torch::equal(load_image(b), img));
    auto none = run_cli({"stylize", "--content", content, "--style", style, "--out", b.string()});
    CHECK(none.code == cli::kExitUsage);
    CHECK(none.err.find(cli::kCheckpointDirEnv) != std::string::npos);
  }
  SUBCASE("sizes that do not divide by 8") {
    const auto odd = m.dir / "odd.png";
    save_image(torch::rand({1, 3, 60, 64}), odd);
    auto r = run_cli({"stylize", "--content", odd.string(), "--style", style, "--checkpoint",
                      m.checkpoint.string(), "--out", b.string()});
    CHECK(r.code == cli::kExitUsage);
    CHECK(r.err.find("divisible by 8") != std::string::npos);
  }
  SUBCASE("unreadable inputs") {
    auto r = run_cli({"stylize", "--content", (m.dir / "nope.png").string(), "--style", style,
                      "--checkpoint", m.checkpoint.string(), "--out", b.string()});
    CHECK(r.code == cli::kExitUsage);
    write_text(m.dir / "broken.ckpt", "not a checkpoint");
    auto bad = run_cli({"stylize", "--content", content, "--style", style, "--checkpoint",
                        (m.dir / "broken.ckpt").string(), "--out", b.string()});
    CHECK(bad.code == cli::kExitUsage);
  }
}

TEST_CASE("grid") {
  auto& m = model();
  REQUIRE(std::filesystem::exists(m.checkpoint));
  const auto out = m.dir / "grid";
  auto r = run_cli({"grid", "--contents", (m.dir / "content").string(), "--styles",
                    (m.dir / "style").string(), "--checkpoint", m.checkpoint.string(), "--out",
                    out.string()});
  CHECK_MESSAGE(r.code == cli::kExitOk, r.err);
  for (const char* name : {"s0_c0.png", "s0_c1.png", "s1_c0.png", "s1_c1.png"}) {
    CHECK_MESSAGE(std::filesystem::exists(out / name), name);
  }
  auto sheet = load_image(out / "contact_sheet.png");
  CHECK(sheet.sizes() == torch::IntArrayRef({1, 3, 2 * 64 + 4, 2 * 64 + 4}));
  // Gutters are white and tiles sit where their names say.
  CHECK(sheet.narrow(2, 64, 4).min().item<float>() == 1.0f);
  auto tile = load_image(out / "s1_c0.png");
  CHECK(torch::equal(sheet.narrow(2, 68, 64).narrow(3, 0, 64), tile));

  std::filesystem::create_directories(m.dir / "nothing");
  auto empty = run_cli({"grid", "--contents", (m.dir / "nothing").string(), "--styles",
                        (m.dir / "style").string(), "--checkpoint", m.checkpoint.string(), "--out",
                        out.string()});
  CHECK(empty.code == cli::kExitUsage);
}

TEST_CASE("contact sheet layout") {
  std::vector<std::vector<torch::Tensor>> rows{{torch::zeros({1, 3, 2, 3}), torch::zeros({1, 3, 2, 3})}};
  auto sheet = cli::contact_sheet(rows, 1);
  CHECK(sheet.sizes() == torch::IntArrayRef({1, 3, 2, 7}));
  CHECK(sheet.select(3, 3).min().item<float>() == 1.0f);
  rows.push_back({torch::zeros({1, 3, 2, 3})});
  CHECK_THROWS(cli::contact_sheet(rows, 1));
}

TEST_CASE("installed binary exit codes") {
  const char* bin = std::getenv("SCINET_BIN");
  if (!bin) {
    MESSAGE("SCINET_BIN not set; skipping process-level checks");
    return;
  }
  auto status = [&](const std::string& args) {
    const int raw = std::system((std::string(bin) + " " + args + " >/dev/null 2>&1").c_str());
    return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  };
  CHECK(status("verify") == 0);
  CHECK(status("verify --epsilon 0") == 1);
  CHECK(status("verify --no-such-flag") == 2);
  CHECK(status("train --config /nonexistent/run.toml") == 2);
}

}
