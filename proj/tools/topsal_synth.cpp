// Writes the two-texture synthetic corpus (images, masks, train/test manifests).
#include <CLI11.hpp>

#include <iostream>

#include "topsal/errors.hpp"
#include "topsal/synthetic.hpp"

int main(int argc, char** argv) {
  topsal::SyntheticOptions opt;
  std::string out;
  CLI::App app{"Generate the synthetic texture corpus", "topsal_synth"};
  app.add_option("--out", out, "output directory")->required();
  app.add_option("--seed", opt.seed, "random seed");
  app.add_option("--size", opt.size, "image side in pixels")->check(CLI::Range(160, 4096));
  app.add_option("--train", opt.train_per_category, "training images per category")->check(CLI::PositiveNumber);
  app.add_option("--test", opt.test_per_category, "test images per category")->check(CLI::PositiveNumber);
  app.add_option("--background-train", opt.background_train, "background training images")->check(CLI::NonNegativeNumber);
  app.add_option("--background-test", opt.background_test, "background test images")->check(CLI::NonNegativeNumber);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : static_cast<int>(topsal::ExitCode::kUsage);
  }
  try {
    topsal::write_synthetic_corpus(out, opt);
  } catch (const topsal::Error& e) {
    std::cerr << "topsal_synth: " << e.what() << '\n';
    return static_cast<int>(e.exit_code());
  }
  std::cout << "corpus written to " << out << '\n';
  return 0;
}
