#pragma once

// Minimal SVG builder. Numbers are printed with fixed precision so output is
// byte-stable across runs.

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace conceptkit::svg {

std::string num(double v);
std::string escape(const std::string& text);

class Document {
 public:
  Document(double width, double height);

  void rect(double x, double y, double w, double h, const std::string& fill,
            const std::string& stroke = "none", const std::string& cls = "");
  void line(double x1, double y1, double x2, double y2, const std::string& stroke,
            double width = 1.0, const std::string& cls = "");
  void polyline(const std::vector<std::pair<double, double>>& points, const std::string& stroke,
                double width = 1.5, const std::string& cls = "");
  void circle(double cx, double cy, double r, const std::string& fill, const std::string& cls = "");
  void text(double x, double y, const std::string& content, double size = 12.0,
            const std::string& anchor = "start", const std::string& cls = "");

  std::string str() const;
  void save(const std::filesystem::path& path) const;

 private:
  double width_;
  double height_;
  std::string body_;
};

// Distinct stroke colour per series index.
const std::string& palette(std::size_t i);

}  // namespace conceptkit::svg
