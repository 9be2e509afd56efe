#include "vsparta/cli.hpp"

int main(int argc, char** argv)
{
    return vsparta::cli::run(argc, argv);
}
