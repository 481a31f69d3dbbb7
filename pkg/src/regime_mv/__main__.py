from regime_mv.cli import main

main()
