#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dasd/errors.hpp"
#include "dasd/pipeline.hpp"
#include "dasd/report.hpp"
#include "json.hpp"

namespace {

using dasd::Json;

struct CommonOpts {
    std::string config_path;
    std::string profile;
    std::int64_t seed = -1;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "experiment config JSON file");
    cmd->add_option("--profile", opts.profile, "configuration profile")
        ->check(CLI::IsMember({"paper", "desk"}));
    cmd->add_option("--seed", opts.seed, "seed override");
}

dasd::ExperimentConfig resolve_config(const CommonOpts& opts) {
    Json root = Json::object();
    if (!opts.config_path.empty()) {
        root = Json::parse(dasd::read_text_file(opts.config_path), nullptr, false);
        if (root.is_discarded()) throw dasd::InvalidValue("config file is not valid JSON");
    }
    if (!opts.profile.empty()) root["profile"] = opts.profile;
    if (opts.seed >= 0) root["seed"] = static_cast<std::uint64_t>(opts.seed);
    return dasd::parse_config(root.dump());
}

int exit_code_for(const std::string& code) {
    static const std::set<std::string> validation = {"unknown_arm", "invalid_value", "unknown_key",
                                                     "invalid_config"};
    return validation.count(code) ? 2 : 1;
}

std::vector<std::string> split_list(const std::string& csv) {
    std::vector<std::string> out;
    std::string current;
    for (char c : csv) {
        if (c == ',') {
            if (!current.empty()) out.push_back(current);
            current.clear();
        } else {
            current.push_back(c);
        }
    }
    if (!current.empty()) out.push_back(current);
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"DASD: dynamic adapters with semantics disentangling, desk scale"};
    app.require_subcommand(1);

    CommonOpts opts;
    std::string corpus_path, ckpt_path, out_path, run_dir, arms_csv = "full,static_adapter";

    CLI::App* genworld = app.add_subcommand("genworld", "generate the synthetic bilingual corpus");
    add_common(genworld, opts);
    genworld->add_option("--out", out_path, "corpus output path")->required();

    CLI::App* pretrain = app.add_subcommand("pretrain", "pretrain and freeze the backbone");
    add_common(pretrain, opts);
    pretrain->add_option("--corpus", corpus_path, "corpus file")->required();
    pretrain->add_option("--out", out_path, "checkpoint output path")->required();

    CLI::App* transfer = app.add_subcommand("transfer", "run both cross-lingual transfer stages");
    add_common(transfer, opts);
    transfer->add_option("--corpus", corpus_path, "corpus file")->required();
    transfer->add_option("--ckpt", ckpt_path, "pretrained backbone checkpoint")->required();
    transfer->add_option("--out", run_dir, "run directory")->required();

    CLI::App* eval_cmd = app.add_subcommand("eval", "retrieval, purity and disentangling metrics");
    add_common(eval_cmd, opts);
    eval_cmd->add_option("--corpus", corpus_path, "corpus file")->required();
    eval_cmd->add_option("--ckpt", ckpt_path, "checkpoint to evaluate")->required();

    CLI::App* ablate = app.add_subcommand("ablate", "run ablation arms and write the CSV table");
    add_common(ablate, opts);
    ablate->add_option("--corpus", corpus_path, "corpus file")->required();
    ablate->add_option("--ckpt", ckpt_path, "pretrained backbone checkpoint")->required();
    ablate->add_option("--arms", arms_csv, "comma-separated arm names");
    ablate->add_option("--out", out_path, "output directory")->required();

    CLI::App* report = app.add_subcommand("report", "render loss curves and metric tables");
    report->add_option("--run", run_dir, "run directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        Json err;
        err["code"] = "usage";
        err["message"] = e.what();
        std::cout << err.dump() << std::endl;
        return 2;
    }

    try {
        Json summary;
        if (genworld->parsed()) {
            summary = dasd::cmd_genworld(resolve_config(opts), out_path);
        } else if (pretrain->parsed()) {
            summary = dasd::cmd_pretrain(resolve_config(opts), corpus_path, out_path);
        } else if (transfer->parsed()) {
            summary = dasd::cmd_transfer(resolve_config(opts), corpus_path, ckpt_path, run_dir);
        } else if (eval_cmd->parsed()) {
            summary = dasd::cmd_eval(resolve_config(opts), corpus_path, ckpt_path);
        } else if (ablate->parsed()) {
            summary = dasd::cmd_ablate(resolve_config(opts), corpus_path, ckpt_path,
                                       split_list(arms_csv), out_path);
        } else if (report->parsed()) {
            summary = dasd::cmd_report(run_dir);
        }
        std::cout << summary.dump(2) << std::endl;
        return 0;
    } catch (const dasd::Error& e) {
        Json err;
        err["code"] = e.code();
        err["message"] = e.what();
        std::cout << err.dump() << std::endl;
        return exit_code_for(e.code());
    } catch (const std::exception& e) {
        Json err;
        err["code"] = "internal";
        err["message"] = e.what();
        std::cout << err.dump() << std::endl;
        return 1;
    }
}
