#include "tta/experiment.hpp"
#include "tta/io.hpp"

#include <doctest.h>

#include <json.hpp>

#include <string>

using namespace tta;

namespace {

std::string error_of(const std::string& text)
{
    try {
        parse_config(text);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

bool mentions(const std::string& msg, const std::string& what) { return msg.find(what) != std::string::npos; }

ExperimentConfig small_config(std::uint64_t seed)
{
    return parse_config(R"({"seed": )" + std::to_string(seed) + R"(,
        "suite": {"points_per_task": 96},
        "model": {"hidden": [16, 16]},
        "corpus_size": 256,
        "pretrain": {"iterations": 20, "warmup_steps": 2},
        "finetune": {"iterations": 10, "warmup_steps": 1},
        "spectral": {"train_points": 12, "control_points": 10}})");
}

}  // namespace

TEST_CASE("config errors name the field path")
{
    CHECK(mentions(error_of("{}"), "seed: required"));
    CHECK(mentions(error_of(R"({"seed": 1, "sede": 2})"), "sede: unknown key"));
    CHECK(mentions(error_of(R"({"seed": 1, "pretrain": {"lr": 0.1, "l_r": 2}})"), "pretrain.l_r: unknown key"));
    CHECK(mentions(error_of(R"({"seed": 1, "model": {"hidden": "wide"}})"), "model.hidden"));
    CHECK(mentions(error_of(R"({"seed": 1, "finetune": {"batch_size": 0}})"), "finetune.batch_size"));
    CHECK(mentions(error_of(R"({"seed": 1, "pretrain": {"lr": -1}})"), "pretrain.lr"));
    CHECK(mentions(error_of(R"({"seed": 1, "model": {"activation": "swish"}})"), "model.activation"));
    CHECK(mentions(error_of(R"({"seed": 1, "model": {"num_classes": 6}})"), "model.num_classes"));
    CHECK(mentions(error_of(R"({"seed": 1, "suite": {"seed": 3}})"), "suite.seed: unknown key"));
    CHECK_FALSE(error_of("{not json").empty());
    CHECK(error_of(R"({"seed": 1})").empty());
}

TEST_CASE("the top-level seed drives every nested seed")
{
    const auto cfg = parse_config(R"({"seed": 42})");
    CHECK(cfg.seed == 42);
    CHECK(cfg.suite.seed == 42);
    CHECK(cfg.pretrain.seed == 42);
    CHECK(cfg.finetune.seed == 42);
    const auto moved = cfg.with_seed(9);
    CHECK(moved.suite.seed == 9);
    CHECK(moved.pretrain.seed == 9);
    CHECK(moved.finetune.seed == 9);
    CHECK(config_hash(moved) != config_hash(cfg));
}

TEST_CASE("canonical hash ignores formatting and explicit defaults")
{
    const auto a = parse_config(R"({"seed": 3, "xi_samples": 100})");
    const auto b = parse_config("{\n  \"xi_samples\" : 100,\n  \"seed\":3,\n  \"pretrain\": {\"lr\": 0.001}\n}");
    CHECK(canonical_json(a) == canonical_json(b));
    CHECK(config_hash(a) == config_hash(b));
    CHECK(config_hash(a) == io::fnv1a64(canonical_json(a)));
    const auto c = parse_config(R"({"seed": 3, "xi_samples": 101})");
    CHECK(config_hash(a) != config_hash(c));

    // The canonical dump parses back to the same configuration.
    CHECK(canonical_json(parse_config(canonical_json(a))) == canonical_json(a));
}

TEST_CASE("manifest carries hash, seed and versions")
{
    const auto cfg = parse_config(R"({"seed": 5})");
    const auto j = nlohmann::json::parse(manifest_json(cfg, "pretrain", {"theta0.ckpt"}));
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(config_hash(cfg)));
    CHECK(j.at("config_hash") == hex);
    CHECK(j.at("seed") == 5);
    CHECK(j.at("tta_version") == tta_version);
    CHECK(j.at("checkpoint_version") == io::checkpoint_version);
    CHECK(j.at("command") == "pretrain");
    CHECK(j.at("artifacts") == nlohmann::json::array({"theta0.ckpt"}));
}

TEST_CASE("experiments are reproducible from the seed")
{
    const Experiment a(small_config(11));
    const Experiment b(small_config(11));
    const Experiment c(small_config(12));
    const auto pa = a.pretrain();
    const auto pb = b.pretrain();
    CHECK(pa == pb);
    CHECK_FALSE(pa == c.pretrain());
    CHECK(a.random_base().params == b.random_base().params);
    CHECK(a.random_init_seed() != a.config().pretrain.seed);
}

TEST_CASE("adopt rejects checkpoints from another model")
{
    const Experiment e(small_config(1));
    const auto p = e.pretrain();
    const auto back = e.adopt(io::decode_checkpoint(io::encode_checkpoint(p)), "theta0.ckpt");
    CHECK(back == p);

    auto other = small_config(1);
    other.model.hidden = {8, 8};
    const Experiment f(other);
    try {
        f.adopt(p, "theta0.ckpt");
        FAIL("expected LayoutError");
    } catch (const LayoutError& err) {
        CHECK(mentions(err.what(), "theta0.ckpt"));
    }
}

TEST_CASE("task_spectrum reports every class over the requested points")
{
    const Experiment e(small_config(2));
    const Model m(e.network(), e.pretrain());
    const auto& sc = e.config().spectral;
    const auto reports = task_spectrum(m, e.suite(), 0, e.suite().control(), sc, 2);
    REQUIRE(reports.size() == e.config().model.num_classes);
    for (const auto& r : reports) {
        CHECK(r.local_energy.size() == sc.train_points + sc.control_points);
    }
    CHECK_THROWS_AS(task_spectrum(m, e.suite(), 1, 1, sc), ContractError);
    SpectralConfig huge = sc;
    huge.train_points = 500;
    CHECK_THROWS_AS(task_spectrum(m, e.suite(), 0, 1, huge), ContractError);

    std::vector<SpectralReport> fake(2);
    fake[0].concentration_ratio = 3.0;
    fake[1].ratio_flagged = true;
    CHECK(mean_concentration(fake, 10.0) == doctest::Approx(6.5));
}
