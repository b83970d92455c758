// Regenerates the bundled architecture spec files under data/.
#include <fstream>
#include <iostream>

#include "sparsegroup/accounting.hpp"

int main(int argc, char** argv) {
  const std::string out_dir = argc > 1 ? argv[1] : "data";
  for (const std::string& name : sparsegroup::arch_preset_names()) {
    const sparsegroup::ArchSpec spec = sparsegroup::make_arch_preset(name);
    const std::string path = out_dir + "/" + name + ".json";
    std::ofstream out(path);
    if (!out) {
      std::cerr << "cannot write " << path << "\n";
      return 1;
    }
    out << sparsegroup::arch_to_json_text(spec);
    std::cout << path << ": params " << sparsegroup::count_params(spec)
              << ", flops " << sparsegroup::count_flops(spec) << "\n";
  }
  return 0;
}
