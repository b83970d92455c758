#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "sparsegroup/pipeline.hpp"

using namespace sparsegroup;

int main(int argc, char** argv) {
  CLI::App app{"structured sparsification of convolutional networks"};
  app.require_subcommand(1);

  // train
  std::string cfg_path, out_ckpt, out_plan;
  CLI::App* train = app.add_subcommand(
      "train", "train the micronet under structured regularization");
  train->add_option("--config", cfg_path, "run config JSON")->required();
  train->add_option("--out-ckpt", out_ckpt, "output checkpoint")->required();
  train->add_option("--out-plan", out_plan, "output plan JSON")->required();

  // compress
  std::string ckpt_path, plan_path;
  double rate = 0.5;
  CLI::App* compress = app.add_subcommand(
      "compress", "convert a trained checkpoint into grouped layers");
  compress->add_option("--ckpt", ckpt_path, "dense checkpoint")->required();
  compress->add_option("--plan", plan_path, "training plan JSON")->required();
  compress->add_option("--rate", rate, "target compression rate in (0,1)")
      ->required()
      ->check(CLI::Range(1e-9, 1.0 - 1e-9));
  compress->add_option("--out-ckpt", out_ckpt, "output checkpoint")->required();
  compress->add_option("--out-plan", out_plan, "output plan JSON")->required();

  // finetune
  CLI::App* finetune = app.add_subcommand(
      "finetune", "finetune the surviving grouped parameters");
  finetune->add_option("--ckpt", ckpt_path, "compressed checkpoint")->required();
  finetune->add_option("--plan", plan_path, "plan JSON")->required();
  finetune->add_option("--config", cfg_path, "run config JSON")->required();
  finetune->add_option("--out-ckpt", out_ckpt, "output checkpoint")->required();

  // verify
  CLI::App* verify = app.add_subcommand(
      "verify", "run the equivalence and invariant suite on artifacts");
  verify->add_option("--ckpt", ckpt_path, "checkpoint")->required();
  verify->add_option("--plan", plan_path, "plan JSON")->required();

  // report
  std::string arch_path, format = "json", out_dir = ".";
  CLI::App* report = app.add_subcommand(
      "report", "emit cardinality/confusion/ledger/trajectory reports");
  report->add_option("--plan", plan_path, "plan JSON")->required();
  report->add_option("--ckpt", ckpt_path, "checkpoint (optional)");
  report->add_option("--arch", arch_path, "arch spec JSON (optional)");
  report->add_option("--format", format, "json or csv")
      ->check(CLI::IsMember({"json", "csv"}));
  report->add_option("--out", out_dir, "output directory")->required();

  // count
  CLI::App* count = app.add_subcommand(
      "count", "params/FLOPs accounting for an arch spec");
  count->add_option("--arch", arch_path, "arch spec JSON")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      const RunConfig config = config_from_json_file(cfg_path);
      TrainOutput out = run_train(config);
      save_checkpoint(checkpoint_from_dense(out.net), out_ckpt);
      save_plan(out.plan, out_plan);
      std::cout << "trained " << config.epochs << " epochs; final sparsity "
                << (out.plan.grouping.sparsity_history.empty()
                        ? 0.0
                        : out.plan.grouping.sparsity_history.back())
                << "\n";
    } else if (*compress) {
      const Checkpoint ckpt = load_checkpoint(ckpt_path);
      if (checkpoint_is_compressed(ckpt))
        throw std::runtime_error(
            "checkpoint already holds grouped (5-D) weights; "
            "compress expects a dense checkpoint");
      const MicroNet net = dense_from_checkpoint(ckpt);
      const RunPlan plan = load_plan(plan_path);
      CompressOutput out = run_compress(net, plan, rate);
      save_checkpoint(checkpoint_from_compressed(out.net), out_ckpt);
      save_plan(out.plan, out_plan);
      std::cout << "threshold " << out.plan.grouping.threshold_used
                << ", achieved rate " << out.plan.grouping.achieved_rate
                << (out.plan.grouping.capacity_limited ? " (capacity limited)"
                                                       : "")
                << ", accuracy " << out.plan.pre_compression_accuracy << " -> "
                << out.plan.post_compression_accuracy << "\n";
    } else if (*finetune) {
      const Checkpoint ckpt = load_checkpoint(ckpt_path);
      const RunPlan plan = load_plan(plan_path);
      const RunConfig config = config_from_json_file(cfg_path);
      const CompressedNet net = compressed_from_checkpoint(ckpt, plan.grouping);
      FinetuneOutput out = run_finetune(net, plan, config);
      save_checkpoint(checkpoint_from_compressed(out.net), out_ckpt);
      std::cout << "finetuned " << config.finetune_epochs
                << " epochs; test accuracy " << out.final_accuracy << "\n";
    } else if (*verify) {
      const bool ok = verify_artifacts(ckpt_path, plan_path, std::cout);
      return ok ? 0 : 1;
    } else if (*report) {
      const RunPlan plan = load_plan(plan_path);
      ArchSpec arch;
      const bool have_arch = !arch_path.empty();
      if (have_arch) arch = arch_from_json_file(arch_path);
      write_reports(plan, have_arch ? &arch : nullptr,
                    format == "json" ? ReportFormat::Json : ReportFormat::Csv,
                    out_dir);
      std::cout << "reports written to " << out_dir << "\n";
    } else if (*count) {
      const ArchSpec arch = arch_from_json_file(arch_path);
      std::cout << "{\"name\":\"" << arch.name
                << "\",\"params\":" << count_params(arch)
                << ",\"flops\":" << count_flops(arch) << "}\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
