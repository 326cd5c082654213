// JSON-lines tail responder used by the remote tail tests.
//   logits[i] = 2 * hidden[i] + layer
// Flags: --garbage answers with a non-JSON line, --die exits after reading
// the first request, --error answers every request with an error object.
#include <iostream>
#include <string>

#include <nlohmann/json.hpp>

int main(int argc, char** argv) {
  const std::string mode = argc > 1 ? argv[1] : "";
  std::string line;
  while (std::getline(std::cin, line)) {
    if (mode == "--die") return 3;
    if (mode == "--garbage") {
      std::cout << "not json" << std::endl;
      continue;
    }
    nlohmann::json out;
    try {
      const auto req = nlohmann::json::parse(line);
      if (mode == "--error" || req.at("op") != "tail") {
        out["error"] = "refused";
      } else {
        const int layer = req.at("layer").get<int>();
        nlohmann::json logits = nlohmann::json::array();
        for (const auto& v : req.at("hidden")) logits.push_back(2.0 * v.get<double>() + layer);
        out["logits"] = logits;
      }
    } catch (const std::exception& e) {
      out["error"] = e.what();
    }
    std::cout << out.dump() << std::endl;
  }
  return 0;
}
