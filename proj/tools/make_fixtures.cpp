// Regenerates the bundled toy fixtures: the detector template, one synthetic
// scene with a single pedestrian and its box file.

#include <filesystem>
#include <iostream>

#include "fsf/fsf.hpp"

int main(int argc, char** argv) {
  const std::filesystem::path dir = argc > 1 ? argv[1] : "data";
  std::filesystem::create_directories(dir);

  const auto templ = fsf::toy::pedestrian_template();
  fsf::toy::SceneOptions opt;
  opt.min_targets = 1;
  opt.max_targets = 1;
  const auto scene = fsf::toy::make_scene(1, templ, opt);

  fsf::io::write_pgm(dir / "template.pgm", templ);
  fsf::io::write_pgm(dir / "toy_scene.pgm", scene.image);
  fsf::io::write_text(dir / "toy_boxes.json", fsf::io::boxes_to_json(scene.targets).dump(2) + "\n");
  std::cout << "wrote fixtures to " << dir << "\n";
}
