#include "descan/app.hpp"

int main(int argc, char** argv) { return descan::app::run_cli(argc, argv); }
