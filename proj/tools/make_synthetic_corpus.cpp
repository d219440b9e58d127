// Writes a procedural corpus (images/, masks/, classes.csv) usable by every
// fssuw subcommand.

#include <iostream>

#include <CLI11.hpp>

#include "fssuw/synthetic.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate a synthetic few-shot segmentation corpus", "make_synthetic_corpus"};
  fssuw::SyntheticSpec spec;
  std::string out;
  app.add_option("--out", out, "Output root")->required();
  app.add_option("--classes", spec.classes, "Number of classes (1-7)");
  app.add_option("--per-class", spec.images_per_class, "Images per class");
  app.add_option("--size", spec.size, "Image side in pixels (multiple of 8)");
  app.add_option("--seed", spec.seed, "Generator seed");
  CLI11_PARSE(app, argc, argv);
  try {
    const auto index = fssuw::make_synthetic_index(spec);
    fssuw::write_corpus(index, out);
    std::cout << "wrote " << index.size() << " samples to " << out << '\n';
  } catch (const fssuw::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
