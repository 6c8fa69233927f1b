// Command-line front end. Links only the shared C API; all failures surface
// as one machine-parseable line: "CDXERR <ErrorClass>: detail".

#include <cstdio>
#include <string>

#include "CLI11.hpp"
#include "codex_ensemble/codex_ensemble.h"

namespace {

int fail_from_api() {
  std::fprintf(stderr, "CDXERR %s\n", cdx_last_error());
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-modality coding pipeline: generate, prepare, train, "
               "evaluate, and predict."};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(cdx_version()));

  std::string config_path;
  std::string only;
  std::string subsets;
  std::string input_path;
  std::string output_path;

  const auto add_config = [&config_path](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "Pipeline config file (JSON)")
        ->required();
  };

  auto* synth = app.add_subcommand("synth", "Generate the synthetic corpus");
  add_config(synth);

  auto* prepare =
      app.add_subcommand("prepare", "Parse, encode, and split the corpus");
  add_config(prepare);

  auto* train = app.add_subcommand("train", "Train networks and baselines");
  add_config(train);
  train->add_option(
      "--only", only,
      "Comma-separated parts: nets,ensemble,combined,confidence");

  auto* evaluate =
      app.add_subcommand("evaluate", "Evaluate on the test split");
  add_config(evaluate);
  evaluate->add_option(
      "--subsets", subsets,
      "Comma-separated '+'-joined modality subsets for the ablation table");

  auto* scope = app.add_subcommand("scope-report",
                                   "Emit the confidence data-scope table");
  add_config(scope);

  auto* predict = app.add_subcommand("predict", "Score an episode file");
  add_config(predict);
  predict->add_option("--input", input_path, "Episode JSONL file")->required();
  predict->add_option("--output", output_path, "Prediction JSONL file")
      ->required();

  CLI11_PARSE(app, argc, argv);

  cdx_pipeline* pipeline = nullptr;
  if (cdx_pipeline_open(config_path.c_str(), &pipeline) != CDX_OK) {
    return fail_from_api();
  }

  cdx_status rc = CDX_OK;
  if (synth->parsed()) {
    rc = cdx_run_synth(pipeline);
  } else if (prepare->parsed()) {
    rc = cdx_run_prepare(pipeline);
  } else if (train->parsed()) {
    rc = cdx_run_train(pipeline, only.empty() ? nullptr : only.c_str());
  } else if (evaluate->parsed()) {
    rc = cdx_run_evaluate(pipeline, subsets.empty() ? nullptr : subsets.c_str());
  } else if (scope->parsed()) {
    rc = cdx_run_scope_report(pipeline);
  } else if (predict->parsed()) {
    rc = cdx_run_predict(pipeline, input_path.c_str(), output_path.c_str());
  }

  const int exit_code = (rc == CDX_OK) ? 0 : fail_from_api();
  cdx_pipeline_close(pipeline);
  return exit_code;
}
