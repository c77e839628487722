from sseplab.cli import main

main()
