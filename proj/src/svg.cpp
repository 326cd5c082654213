#include "conceptkit/svg.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "conceptkit/error.hpp"

namespace conceptkit::svg {

std::string num(double v) {
  if (std::abs(v) < 5e-4) v = 0.0;  // avoid "-0.000"
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

std::string escape(const std::string& text) {
  std::string out;
  out.reserve(text.size());
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

namespace {
std::string cls_attr(const std::string& cls) {
  return cls.empty() ? "" : " class=\"" + cls + "\"";
}
}  // namespace

Document::Document(double width, double height) : width_(width), height_(height) {}

void Document::rect(double x, double y, double w, double h, const std::string& fill,
                    const std::string& stroke, const std::string& cls) {
  body_ += "<rect" + cls_attr(cls) + " x=\"" + num(x) + "\" y=\"" + num(y) + "\" width=\"" +
           num(w) + "\" height=\"" + num(h) + "\" fill=\"" + fill + "\" stroke=\"" + stroke +
           "\"/>\n";
}

void Document::line(double x1, double y1, double x2, double y2, const std::string& stroke,
                    double width, const std::string& cls) {
  body_ += "<line" + cls_attr(cls) + " x1=\"" + num(x1) + "\" y1=\"" + num(y1) + "\" x2=\"" +
           num(x2) + "\" y2=\"" + num(y2) + "\" stroke=\"" + stroke + "\" stroke-width=\"" +
           num(width) + "\"/>\n";
}

void Document::polyline(const std::vector<std::pair<double, double>>& points,
                        const std::string& stroke, double width, const std::string& cls) {
  std::string pts;
  for (const auto& [x, y] : points) pts += (pts.empty() ? "" : " ") + num(x) + "," + num(y);
  body_ += "<polyline" + cls_attr(cls) + " points=\"" + pts + "\" fill=\"none\" stroke=\"" +
           stroke + "\" stroke-width=\"" + num(width) + "\"/>\n";
}

void Document::circle(double cx, double cy, double r, const std::string& fill,
                      const std::string& cls) {
  body_ += "<circle" + cls_attr(cls) + " cx=\"" + num(cx) + "\" cy=\"" + num(cy) + "\" r=\"" +
           num(r) + "\" fill=\"" + fill + "\"/>\n";
}

void Document::text(double x, double y, const std::string& content, double size,
                    const std::string& anchor, const std::string& cls) {
  body_ += "<text" + cls_attr(cls) + " x=\"" + num(x) + "\" y=\"" + num(y) + "\" font-size=\"" +
           num(size) + "\" text-anchor=\"" + anchor + "\" font-family=\"sans-serif\">" +
           escape(content) + "</text>\n";
}

std::string Document::str() const {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(width_) + "\" height=\"" +
         num(height_) + "\" viewBox=\"0 0 " + num(width_) + " " + num(height_) + "\">\n" +
         "<rect x=\"0\" y=\"0\" width=\"" + num(width_) + "\" height=\"" + num(height_) +
         "\" fill=\"white\"/>\n" + body_ + "</svg>\n";
}

void Document::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  out << str();
}

const std::string& palette(std::size_t i) {
  static const std::array<std::string, 8> colours = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                                     "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};
  return colours[i % colours.size()];
}

}  // namespace conceptkit::svg
